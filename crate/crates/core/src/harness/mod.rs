//! Optimisation, fold training, cross-validation, ablations and run artifacts.

pub mod ablation;
pub mod checkpoint;
pub mod cv;
pub mod export;
pub mod optim;
pub mod train;

pub use ablation::{ablation_csv, run_ablation, suite_rows, AblationRow, Suite};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use cv::{run_cv, CvOutcome};
pub use export::export_run;
pub use optim::{adam_step, AdamSettings, AdamState, Plateau};
pub use train::{evaluate, train_fold, EpochRecord, Evaluation, FoldOutcome, Trained};
