use std::thread;

use super::train::{train_fold, FoldOutcome};
use crate::config::{ModelConfig, TrainConfig};
use crate::data::{stratified_kfold, Prepared};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, MeanStd};

pub struct CvOutcome {
    pub folds: Vec<FoldOutcome>,
    pub summary: Vec<(&'static str, Option<MeanStd>)>,
}

impl CvOutcome {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|(name, _)| *name == metric)
            .and_then(|(_, m)| m.map(|m| m.mean))
    }
}

/// Stratified k-fold training. Folds are independent, so `train.jobs > 1` runs
/// them on separate threads with identical results.
pub fn run_cv(model: &ModelConfig, train: &TrainConfig, data: &[Prepared]) -> Result<CvOutcome> {
    let labels: Vec<bool> = data.iter().map(|s| s.label).collect();
    let folds = stratified_kfold(&labels, train.folds, train.seed)?;
    let jobs = train.jobs.min(folds.len()).max(1);
    let mut results: Vec<Option<Result<FoldOutcome>>> = (0..folds.len()).map(|_| None).collect();
    if jobs == 1 {
        for (k, f) in folds.iter().enumerate() {
            results[k] = Some(train_fold(k, f, model, train, data));
        }
    } else {
        thread::scope(|scope| {
            for (chunk_id, slots) in results.chunks_mut(folds.len().div_ceil(jobs)).enumerate() {
                let start = chunk_id * folds.len().div_ceil(jobs);
                let folds = &folds;
                scope.spawn(move || {
                    for (j, slot) in slots.iter_mut().enumerate() {
                        let k = start + j;
                        *slot = Some(train_fold(k, &folds[k], model, train, data));
                    }
                });
            }
        });
    }
    let folds = results
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(Error::Training("fold did not run".into()))))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<_> = folds.iter().map(|f| f.report).collect();
    let summary = aggregate(&reports);
    Ok(CvOutcome { folds, summary })
}
