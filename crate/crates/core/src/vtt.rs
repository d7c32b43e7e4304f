//! Turning a volume and a clinical record into token sequences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tensor::{Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Split a cubic `[S,S,S]` volume into `N = S³/P³` flattened patches `[N, P³]`.
///
/// Rows follow the patch grid in `(z, y, x)` lexicographic order; each row is
/// the patch in row-major `(z, y, x)` order.
pub fn patchify(volume: &Tensor, p: usize) -> Result<Tensor> {
    let s = cube_side(volume)?;
    if p == 0 || s % p != 0 {
        return Err(Error::Config(format!("volume side {s} is not divisible by patch side {p}")));
    }
    let g = s / p;
    let src = volume.data();
    let mut out = Vec::with_capacity(src.len());
    for gz in 0..g {
        for gy in 0..g {
            for gx in 0..g {
                for z in 0..p {
                    for y in 0..p {
                        let base = ((gz * p + z) * s + gy * p + y) * s + gx * p;
                        out.extend_from_slice(&src[base..base + p]);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(&[g * g * g, p * p * p], out)?)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, p: usize) -> Result<Tensor> {
    let shape = patches.shape();
    if shape.len() != 2 || p == 0 || shape[1] != p * p * p {
        return Err(Error::Config(format!("patches {shape:?} do not hold P={p} cubes")));
    }
    let g = integer_cbrt(shape[0])
        .ok_or_else(|| Error::Config(format!("patch count {} is not a cube", shape[0])))?;
    let s = g * p;
    let src = patches.data();
    let mut out = vec![0.0; s * s * s];
    let mut row = 0;
    for gz in 0..g {
        for gy in 0..g {
            for gx in 0..g {
                let patch = &src[row * p * p * p..(row + 1) * p * p * p];
                for z in 0..p {
                    for y in 0..p {
                        let base = ((gz * p + z) * s + gy * p + y) * s + gx * p;
                        out[base..base + p].copy_from_slice(&patch[(z * p + y) * p..][..p]);
                    }
                }
                row += 1;
            }
        }
    }
    Ok(Tensor::new(&[s, s, s], out)?)
}

fn cube_side(volume: &Tensor) -> Result<usize> {
    match volume.shape() {
        [a, b, c] if a == b && b == c => Ok(*a),
        other => Err(Error::Config(format!("expected a cubic [S,S,S] volume, got {other:?}"))),
    }
}

fn integer_cbrt(n: usize) -> Option<usize> {
    let r = (n as f64).cbrt().round() as usize;
    (r * r * r == n).then_some(r)
}

/// `tokens = patches · projection + pos`.
pub fn embed_patches(tape: &Tape, patches: Var, projection: Var, pos: Var) -> Result<Var> {
    let projected = tape.matmul(patches, projection)?;
    let (ps, qs) = (tape.shape(projected), tape.shape(pos));
    if ps != qs {
        return Err(Error::Config(format!(
            "positional embedding {qs:?} does not match projected patches {ps:?}"
        )));
    }
    Ok(tape.add(projected, pos)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl FromStr for Gender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Gender::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown gender `{s}`")))
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Anatomical site of the stone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoneLocation {
    LeftUreter,
    RightUreter,
    Ureter,
    LeftKidney,
    RightKidney,
    Kidney,
    Bladder,
    Urethra,
}

impl StoneLocation {
    pub const ALL: [StoneLocation; 8] = [
        StoneLocation::LeftUreter,
        StoneLocation::RightUreter,
        StoneLocation::Ureter,
        StoneLocation::LeftKidney,
        StoneLocation::RightKidney,
        StoneLocation::Kidney,
        StoneLocation::Bladder,
        StoneLocation::Urethra,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StoneLocation::LeftUreter => "left_ureter",
            StoneLocation::RightUreter => "right_ureter",
            StoneLocation::Ureter => "ureter",
            StoneLocation::LeftKidney => "left_kidney",
            StoneLocation::RightKidney => "right_kidney",
            StoneLocation::Kidney => "kidney",
            StoneLocation::Bladder => "bladder",
            StoneLocation::Urethra => "urethra",
        }
    }
}

impl FromStr for StoneLocation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StoneLocation::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown stone location `{s}`")))
    }
}

impl fmt::Display for StoneLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The seven preoperative clinical variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EhrRecord {
    pub age: f64,
    pub gender: Gender,
    pub blood_leukocyte: f64,
    pub serum_creatinine: f64,
    pub urine_leukocyte: f64,
    pub urine_ph: f64,
    pub stone_location: StoneLocation,
}

impl EhrRecord {
    pub fn validate(&self) -> Result<()> {
        if !(4.0..=9.0).contains(&self.urine_ph) {
            return Err(Error::Data(format!("urine_ph {} outside [4, 9]", self.urine_ph)));
        }
        for (name, v) in [
            ("age", self.age),
            ("blood_leukocyte", self.blood_leukocyte),
            ("serum_creatinine", self.serum_creatinine),
            ("urine_leukocyte", self.urine_leukocyte),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Data(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Continuous features in token order.
    pub fn continuous(&self) -> [f64; 5] {
        [
            self.age,
            self.blood_leukocyte,
            self.serum_creatinine,
            self.urine_leukocyte,
            self.urine_ph,
        ]
    }
}

pub const CONTINUOUS_NAMES: [&str; 5] = [
    "age",
    "blood_leukocyte",
    "serum_creatinine",
    "urine_leukocyte",
    "urine_ph",
];

/// Rows of the stacked EHR embedding matrix: age, gender×2, blood leukocyte,
/// serum creatinine, urine leukocyte, urine pH, location×8.
pub const EHR_FEATURE_WIDTH: usize = 15;

/// Token `t` reads embedding rows `EHR_ROW_RANGES[t]`.
pub const EHR_ROW_RANGES: [(usize, usize); 7] =
    [(0, 1), (1, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 15)];

/// Training-split mean and population standard deviation of each continuous feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EhrStats {
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

impl EhrStats {
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a EhrRecord>) -> Result<Self> {
        let rows: Vec<[f64; 5]> = records.into_iter().map(|r| r.continuous()).collect();
        if rows.is_empty() {
            return Err(Error::Data("cannot fit EHR statistics on zero records".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; 5];
        let mut std = [0.0; 5];
        for f in 0..5 {
            mean[f] = rows.iter().map(|r| r[f]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[f] - mean[f]).powi(2)).sum::<f64>() / n;
            std[f] = var.sqrt();
            if std[f] <= 0.0 {
                return Err(Error::Data(format!(
                    "feature `{}` has zero variance in the training split",
                    CONTINUOUS_NAMES[f]
                )));
            }
        }
        Ok(EhrStats { mean, std })
    }

    pub fn standardize(&self, record: &EhrRecord) -> [f64; 5] {
        let raw = record.continuous();
        std::array::from_fn(|f| (raw[f] - self.mean[f]) / self.std[f])
    }
}

/// Block-structured `[7, 15]` design matrix: row `t` holds token `t`'s
/// standardized value or one-hot code in its own embedding rows.
pub fn ehr_design(record: &EhrRecord, stats: &EhrStats) -> Tensor {
    let z = stats.standardize(record);
    let mut d = vec![0.0; 7 * EHR_FEATURE_WIDTH];
    let mut set = |token: usize, col: usize, v: f64| d[token * EHR_FEATURE_WIDTH + col] = v;
    set(0, 0, z[0]);
    set(1, 1 + record.gender.index(), 1.0);
    set(2, 3, z[1]);
    set(3, 4, z[2]);
    set(4, 5, z[3]);
    set(5, 6, z[4]);
    set(6, 7 + record.stone_location.index(), 1.0);
    Tensor::new(&[7, EHR_FEATURE_WIDTH], d).expect("fixed design shape")
}

/// Seven `[7, E]` EHR tokens from the stacked `[15, E]` embedding matrix.
pub fn encode_ehr(tape: &Tape, record: &EhrRecord, stats: &EhrStats, embeddings: Var) -> Result<Var> {
    let design = tape.constant(ehr_design(record, stats));
    Ok(tape.matmul(design, embeddings)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_rows_follow_grid_order() {
        let v = Tensor::from_fn(&[4, 4, 4], |i| i as f64);
        let p = patchify(&v, 2).unwrap();
        assert_eq!(p.shape(), &[8, 8]);
        assert_eq!(&p.data()[..8], &[0.0, 1.0, 4.0, 5.0, 16.0, 17.0, 20.0, 21.0]);
        // second patch is the +x neighbour
        assert_eq!(p.data()[8], 2.0);
        assert_eq!(unpatchify(&p, 2).unwrap(), v);
    }

    #[test]
    fn rejects_indivisible_side() {
        assert!(patchify(&Tensor::zeros(&[6, 6, 6]), 4).is_err());
        assert!(patchify(&Tensor::zeros(&[4, 4, 2]), 2).is_err());
    }

    #[test]
    fn categorical_parsing() {
        assert_eq!("bladder".parse::<StoneLocation>().unwrap(), StoneLocation::Bladder);
        assert!("liver".parse::<StoneLocation>().is_err());
        assert!("other".parse::<Gender>().is_err());
    }
}
