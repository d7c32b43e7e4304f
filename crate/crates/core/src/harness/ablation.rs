use std::fmt::Write as _;
use std::str::FromStr;

use super::cv::{run_cv, CvOutcome};
use super::export::csv_field;
use crate::config::{ClassLosses, Experiment, FusionMode, Modalities, Weighting};
use crate::data::Prepared;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Modules,
    Taps,
    Losses,
    Weights,
    Threshold,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["modules", "taps", "losses", "weights", "threshold"];
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "modules" => Suite::Modules,
            "taps" => Suite::Taps,
            "losses" => Suite::Losses,
            "weights" => Suite::Weights,
            "threshold" => Suite::Threshold,
            _ => {
                return Err(Error::Config(format!(
                    "unknown suite `{s}`; expected one of: {}",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

pub const THRESHOLDS: [f64; 7] = [0.70, 0.75, 0.78, 0.80, 0.82, 0.85, 0.90];
pub const CLASS_RATIOS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Labelled experiment variants derived from `base`.
pub fn suite_rows(suite: Suite, base: &Experiment) -> Vec<(String, Experiment)> {
    let with = |f: &dyn Fn(&mut Experiment)| {
        let mut e = base.clone();
        f(&mut e);
        e
    };
    match suite {
        Suite::Modules => {
            // Rows before dynamic weighting train with an even fixed split.
            let fixed = |e: &mut Experiment| {
                e.train.weighting = Weighting::Fixed;
                e.train.fixed_class_weight = 0.5;
            };
            let fused = |e: &mut Experiment, cea: FusionMode, sma: FusionMode| {
                e.model.modalities = Modalities::Both;
                e.model.cea = cea;
                e.model.sma = sma;
            };
            vec![
                ("ehr_only".into(), with(&|e| {
                    fixed(e);
                    e.model.modalities = Modalities::EhrOnly;
                })),
                ("ct_only".into(), with(&|e| {
                    fixed(e);
                    e.model.modalities = Modalities::CtOnly;
                })),
                ("ct_clinical_concat".into(), with(&|e| {
                    fixed(e);
                    fused(e, FusionMode::Concat, FusionMode::Concat);
                })),
                ("plus_cea".into(), with(&|e| {
                    fixed(e);
                    fused(e, FusionMode::Attention, FusionMode::Concat);
                })),
                ("plus_sma".into(), with(&|e| {
                    fixed(e);
                    fused(e, FusionMode::Attention, FusionMode::Attention);
                })),
                ("plus_dw".into(), with(&|e| {
                    fused(e, FusionMode::Attention, FusionMode::Attention);
                    e.train.weighting = Weighting::Dynamic;
                })),
            ]
        }
        Suite::Taps => (1u32..16)
            .map(|bits| {
                let sel: Vec<usize> = (1..=4).filter(|t| bits & (1 << (t - 1)) != 0).collect();
                let layers: Vec<String> = sel.iter().map(|&t| base.model.tap_indices[t - 1].to_string()).collect();
                (format!("layers_{}", layers.join("+")), with(&|e| e.model.sma_taps = sel.clone()))
            })
            .collect(),
        Suite::Losses => [
            ("bce_focal", ClassLosses::Both),
            ("bce_only", ClassLosses::BceOnly),
            ("focal_only", ClassLosses::FocalOnly),
        ]
        .into_iter()
        .map(|(label, c)| (label.to_string(), with(&|e| e.train.class_losses = c)))
        .collect(),
        Suite::Weights => {
            let mut rows: Vec<(String, Experiment)> = CLASS_RATIOS
                .iter()
                .map(|&c| {
                    let label = format!("class{c}_seg{}", (10.0 - 10.0 * c).round() / 10.0);
                    (label, with(&|e| {
                        e.train.weighting = Weighting::Fixed;
                        e.train.fixed_class_weight = c;
                    }))
                })
                .collect();
            rows.push(("auto".into(), with(&|e| e.train.weighting = Weighting::Dynamic)));
            rows
        }
        Suite::Threshold => THRESHOLDS
            .iter()
            .map(|&t| {
                (format!("threshold_{t}"), with(&|e| {
                    e.train.weighting = Weighting::Dynamic;
                    e.train.dice_threshold = t;
                }))
            })
            .collect(),
    }
}

pub struct AblationRow {
    pub label: String,
    pub experiment: Experiment,
    pub outcome: CvOutcome,
}

pub fn run_ablation(suite: Suite, base: &Experiment, data: &[Prepared]) -> Result<Vec<AblationRow>> {
    suite_rows(suite, base)
        .into_iter()
        .map(|(label, experiment)| {
            let outcome = run_cv(&experiment.model, &experiment.train, data)
                .map_err(|e| Error::Training(format!("ablation row {label}: {e}")))?;
            Ok(AblationRow { label, experiment, outcome })
        })
        .collect()
}

/// One row per variant: label, mean and std of each metric, config echo.
pub fn ablation_csv(suite: Suite, rows: &[AblationRow]) -> String {
    let suite_name = Suite::NAMES[suite as usize];
    let mut s = String::from("suite,row");
    for f in MetricsReport::FIELDS {
        let _ = write!(s, ",{f}_mean,{f}_std");
    }
    s.push_str(",config\n");
    for r in rows {
        let _ = write!(s, "{suite_name},{}", csv_field(&r.label));
        for (_, ms) in &r.outcome.summary {
            match ms {
                Some(m) => {
                    let _ = write!(s, ",{},{}", m.mean, m.std);
                }
                None => s.push_str(",,"),
            }
        }
        let _ = writeln!(s, ",{}", csv_field(&r.experiment.echo()));
    }
    s
}
