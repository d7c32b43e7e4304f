//! Synthetic cohort generation, preprocessing, fold splitting and dataset files.

pub(crate) mod io;
mod preprocess;
mod split;
mod synth;

pub use io::{read_dataset, write_dataset, Manifest, ManifestEntry, MANIFEST_FILE};
pub use preprocess::{crop_stone_cube, mask_centroid, prepare, window_normalize, Prepared};
pub use split::{stratified_kfold, Fold};
pub use synth::{generate_dataset, generate_sample, sample_labels, sample_rng};

use tensor::Tensor;

use crate::config::GeneratorConfig;
use crate::vtt::EhrRecord;

/// One case as generated: an intensity volume in HU, its 0/1 stone mask, the
/// clinical record and the infectivity label.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientSample {
    pub id: String,
    pub volume: Tensor,
    pub mask: Tensor,
    pub ehr: EhrRecord,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: GeneratorConfig,
    pub samples: Vec<PatientSample>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.label).collect()
    }
}
