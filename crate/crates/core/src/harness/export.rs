use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::cv::CvOutcome;
use super::train::EpochRecord;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub const EPOCH_LOG: &str = "epochlog.csv";
pub const FOLD_METRICS: &str = "fold_metrics.csv";
pub const SUMMARY: &str = "summary.json";
pub const WEIGHTS_TRAJECTORY: &str = "weights_trajectory.csv";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Quote a CSV field when it contains a separator, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn epoch_log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from(
        "fold,epoch,lr,w_dice,w_bce,w_focal,train_total,train_dice,train_bce,train_focal,val_total,val_dice,val_acc,val_auc\n",
    );
    for r in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.fold,
            r.epoch,
            r.lr,
            r.weights.dice,
            r.weights.bce,
            r.weights.focal,
            r.train_total,
            opt(r.train_dice),
            r.train_bce,
            r.train_focal,
            r.val_total,
            opt(r.val_seg_dice),
            r.val_acc,
            opt(r.val_auc)
        );
    }
    s
}

pub fn weights_trajectory_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from("fold,epoch,s_dice,w_dice,w_bce,w_focal\n");
    for r in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.fold,
            r.epoch,
            opt(r.val_seg_dice),
            r.weights.dice,
            r.weights.bce,
            r.weights.focal
        );
    }
    s
}

pub fn fold_metrics_csv(rows: &[(usize, usize, MetricsReport)]) -> String {
    let mut s = format!("fold,best_epoch,{}\n", MetricsReport::FIELDS.join(","));
    for (fold, epoch, r) in rows {
        let vals: Vec<String> = r.values().iter().map(|v| opt(*v)).collect();
        let _ = writeln!(s, "{fold},{epoch},{}", vals.join(","));
    }
    s
}

pub fn summary_json(cv: &CvOutcome, config_echo: &str) -> Value {
    let mut metrics = Map::new();
    for (name, ms) in &cv.summary {
        metrics.insert(
            name.to_string(),
            ms.map_or(Value::Null, |m| json!({ "mean": m.mean, "std": m.std })),
        );
    }
    json!({
        "config": config_echo,
        "folds": cv.folds.len(),
        "metrics": metrics,
        "per_fold": cv.folds.iter().map(|f| json!({
            "fold": f.fold,
            "best_epoch": f.best_epoch,
            "report": f.report,
        })).collect::<Vec<_>>(),
    })
}

/// Write the four run artifacts into `dir`.
pub fn export_run(dir: &Path, cv: &CvOutcome, config_echo: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let log: Vec<EpochRecord> = cv.folds.iter().flat_map(|f| f.log.iter().cloned()).collect();
    write(&dir.join(EPOCH_LOG), epoch_log_csv(&log))?;
    write(&dir.join(WEIGHTS_TRAJECTORY), weights_trajectory_csv(&log))?;
    let rows: Vec<_> = cv.folds.iter().map(|f| (f.fold, f.best_epoch, f.report)).collect();
    write(&dir.join(FOLD_METRICS), fold_metrics_csv(&rows))?;
    let mut text = serde_json::to_string_pretty(&summary_json(cv, config_echo)).map_err(|e| Error::Json {
        path: dir.join(SUMMARY),
        source: e,
    })?;
    text.push('\n');
    write(&dir.join(SUMMARY), text)
}
