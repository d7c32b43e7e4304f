//! Classification and segmentation metrics.

use serde::{Deserialize, Serialize};
use tensor::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub counts: ConfusionCounts,
    pub acc: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Predictions at `p ≥ threshold` are positive. Precision, recall and F1 are 0
/// when their denominator is 0.
pub fn classification_metrics(probs: &[f64], labels: &[bool], threshold: f64) -> Result<ClassificationMetrics> {
    if probs.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::Metric("no samples to score".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ClassificationMetrics {
        counts: c,
        acc: ratio(c.tp + c.tn, c.total()),
        f1,
        recall,
        precision,
    })
}

/// Area under the ROC curve via the rank-sum statistic, ties sharing their mean rank.
pub fn roc_auc(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", probs.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUC needs both positive and negative labels".into()));
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probs[order[j + 1]] == probs[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let mean_rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += mean_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Binary `[D, H, W]` volume.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    voxels: Vec<bool>,
}

impl Mask {
    pub fn new(dims: [usize; 3], voxels: Vec<bool>) -> Result<Self> {
        if dims.iter().product::<usize>() != voxels.len() {
            return Err(Error::Metric(format!("{} voxels for dims {dims:?}", voxels.len())));
        }
        Ok(Mask { dims, voxels })
    }

    /// Voxels with value `≥ threshold`; the trailing three axes are spatial.
    pub fn from_tensor(t: &Tensor, threshold: f64) -> Result<Self> {
        let s = t.shape();
        if s.len() < 3 || s[..s.len() - 3].iter().any(|&d| d != 1) {
            return Err(Error::Metric(format!("expected a single-channel volume, got {s:?}")));
        }
        let dims = [s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]];
        Mask::new(dims, t.data().iter().map(|&v| v >= threshold).collect())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    fn at(&self, z: isize, y: isize, x: isize) -> bool {
        let [d, h, w] = self.dims;
        if z < 0 || y < 0 || x < 0 || z >= d as isize || y >= h as isize || x >= w as isize {
            return false;
        }
        self.voxels[(z as usize * h + y as usize) * w + x as usize]
    }

    /// Mask voxels with at least one 6-neighbour outside the mask; the border counts as outside.
    pub fn surface(&self) -> Mask {
        let [d, h, w] = self.dims;
        let mut out = vec![false; self.voxels.len()];
        for z in 0..d as isize {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    if !self.at(z, y, x) {
                        continue;
                    }
                    let exposed = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
                        .iter()
                        .any(|&(dz, dy, dx)| !self.at(z + dz, y + dy, x + dx));
                    out[(z as usize * h + y as usize) * w + x as usize] = exposed;
                }
            }
        }
        Mask { dims: self.dims, voxels: out }
    }

    fn check_same(&self, other: &Mask) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Metric(format!("mask dims {:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }
}

/// `(2|A∩B|/(|A|+|B|), |A∩B|/|A∪B|)`; both are 1 when both masks are empty.
pub fn dice_iou(pred: &Mask, truth: &Mask) -> Result<(f64, f64)> {
    pred.check_same(truth)?;
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.voxels.iter().zip(&truth.voxels) {
        a += p as usize;
        b += t as usize;
        inter += (p && t) as usize;
    }
    if a + b == 0 {
        return Ok((1.0, 1.0));
    }
    let union = a + b - inter;
    Ok((2.0 * inter as f64 / (a + b) as f64, inter as f64 / union as f64))
}

const FAR: i64 = i64::MAX / 4;

/// Squared Euclidean distance from every voxel to the nearest `true` voxel,
/// by three separable 1D lower-envelope passes in exact integer arithmetic.
pub fn squared_distance_transform(features: &Mask) -> Vec<i64> {
    let [d, h, w] = features.dims;
    let mut f: Vec<i64> = features.voxels.iter().map(|&v| if v { 0 } else { FAR }).collect();
    let mut pass = |len: usize, stride: usize, lines: &mut dyn Iterator<Item = usize>| {
        let mut line = vec![0i64; len];
        for start in lines {
            for (q, slot) in line.iter_mut().enumerate() {
                *slot = f[start + q * stride];
            }
            for q in 0..len {
                let mut best = FAR;
                for (v, &fv) in line.iter().enumerate() {
                    if fv < FAR {
                        let dq = q as i64 - v as i64;
                        best = best.min(fv + dq * dq);
                    }
                }
                f[start + q * stride] = best;
            }
        }
    };
    pass(w, 1, &mut (0..d * h).map(|r| r * w));
    pass(h, w, &mut (0..d).flat_map(|z| (0..w).map(move |x| z * h * w + x)));
    pass(d, h * w, &mut (0..h * w));
    f
}

/// Linear-interpolation percentile of sorted data, `q ∈ [0, 100]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 95th percentile of the pooled surface-to-surface distances in both directions, in mm.
pub fn hd95(pred: &Mask, truth: &Mask, spacing: f64) -> Result<f64> {
    pred.check_same(truth)?;
    if pred.count() == 0 {
        return Err(Error::Metric("hd95: prediction mask is empty".into()));
    }
    if truth.count() == 0 {
        return Err(Error::Metric("hd95: reference mask is empty".into()));
    }
    let (sp, st) = (pred.surface(), truth.surface());
    let (to_t, to_p) = (squared_distance_transform(&st), squared_distance_transform(&sp));
    let mut dists = Vec::new();
    for (i, &on) in sp.voxels.iter().enumerate() {
        if on {
            dists.push((to_t[i] as f64).sqrt());
        }
    }
    for (i, &on) in st.voxels.iter().enumerate() {
        if on {
            dists.push((to_p[i] as f64).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&dists, 95.0) * spacing)
}

/// One fold's (or one evaluation's) results. Segmentation fields are `None`
/// for models without a segmentation branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub auc: Option<f64>,
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    pub hd95: Option<f64>,
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 8] = ["acc", "f1", "recall", "precision", "auc", "dice", "iou", "hd95"];

    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.acc),
            Some(self.f1),
            Some(self.recall),
            Some(self.precision),
            self.auc,
            self.dice,
            self.iou,
            self.hd95,
        ]
    }
}

/// Mean and population standard deviation of one metric across folds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd { mean, std: var.sqrt() })
}

/// Per-metric mean ± std; a metric is summarised only if every fold has it.
pub fn aggregate(reports: &[MetricsReport]) -> Vec<(&'static str, Option<MeanStd>)> {
    MetricsReport::FIELDS
        .iter()
        .enumerate()
        .map(|(k, &name)| {
            let vals: Option<Vec<f64>> = reports.iter().map(|r| r.values()[k]).collect();
            (name, vals.and_then(|v| mean_std(&v)))
        })
        .collect()
}
