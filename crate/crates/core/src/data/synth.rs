use std::f64::consts::TAU;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use tensor::Tensor;

use super::{Dataset, PatientSample};
use crate::config::GeneratorConfig;
use crate::error::{Error, Result};
use crate::vtt::{EhrRecord, Gender, StoneLocation};

/// Relative frequency of each stone site, in [`StoneLocation::ALL`] order.
const LOCATION_WEIGHTS: [f64; 8] = [86.0, 53.0, 63.0, 15.0, 17.0, 16.0, 10.0, 7.0];

const BACKGROUND_HU: f64 = 40.0;
const STONE_HU: f64 = 900.0;

/// Stream 0 draws the label permutation; sample `i` uses stream `i + 1`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Exactly `round(n · class_balance)` infectious cases, placed by a seeded shuffle.
pub fn sample_labels(cfg: &GeneratorConfig) -> Vec<bool> {
    let n = cfg.sample_count;
    let positives = (n as f64 * cfg.class_balance).round() as usize;
    let mut labels: Vec<bool> = (0..n).map(|i| i < positives).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    labels.shuffle(&mut rng);
    labels
}

pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let samples = sample_labels(cfg)
        .into_iter()
        .enumerate()
        .map(|(i, label)| generate_sample(cfg, i, label))
        .collect::<Result<_>>()?;
    Ok(Dataset { config: cfg.clone(), samples })
}

struct Stone {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Stone {
    /// Ellipsoidal radius: below 1 inside the stone.
    fn rho(&self, z: usize, y: usize, x: usize) -> f64 {
        let p = [z as f64, y as f64, x as f64];
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn generate_sample(cfg: &GeneratorConfig, index: usize, label: bool) -> Result<PatientSample> {
    let mut rng = sample_rng(cfg.seed, index);
    let g = cfg.volume_side;
    let s = cfg.signal_strength;
    let y = if label { 1.0 } else { 0.0 };

    let mut attempts = 0;
    let (stone, mask) = loop {
        if attempts > cfg.max_retries {
            return Err(Error::Data(format!(
                "sample {index}: no stone of at least {} voxels after {} attempts",
                cfg.min_volume, cfg.max_retries
            )));
        }
        attempts += 1;
        let margin = 3.0f64.min((g as f64 - 1.0) / 2.0);
        let center = std::array::from_fn(|_| rng.random_range(margin..=(g as f64 - 1.0 - margin)));
        let radii = std::array::from_fn(|_| rng.random_range(1.5..4.5));
        let stone = Stone { center, radii };
        let mask: Vec<f64> = (0..g * g * g)
            .map(|i| {
                let (z, yy, x) = (i / (g * g), (i / g) % g, i % g);
                if stone.rho(z, yy, x) <= 1.0 { 1.0 } else { 0.0 }
            })
            .collect();
        if mask.iter().sum::<f64>() >= cfg.min_volume as f64 {
            break (stone, mask);
        }
    };

    // Smooth background: a few random plane waves plus voxel noise.
    let waves: Vec<([f64; 3], f64, f64)> = (0..3)
        .map(|_| {
            let k = std::array::from_fn(|_| rng.random_range(-0.6..0.6));
            (k, rng.random_range(0.0..TAU), rng.random_range(5.0..25.0))
        })
        .collect();
    let noise = Normal::new(0.0, 30.0).expect("valid");
    let scanner = Normal::new(0.0, 80.0).expect("valid").sample(&mut rng);
    let shells = rng.random_range(2.0..4.0);
    let phase = rng.random_range(0.0..TAU);

    let mut volume = Vec::with_capacity(g * g * g);
    for i in 0..g * g * g {
        let (z, yy, x) = (i / (g * g), (i / g) % g, i % g);
        let mut v = BACKGROUND_HU + noise.sample(&mut rng);
        for (k, ph, amp) in &waves {
            v += amp * (k[0] * z as f64 + k[1] * yy as f64 + k[2] * x as f64 + ph).sin();
        }
        if mask[i] > 0.0 {
            let rho = stone.rho(z, yy, x);
            // Uniform dense core versus fainter concentric laminations.
            let texture = if label {
                -s * 60.0 + s * 120.0 * (TAU * shells * rho + phase).cos()
            } else {
                s * 60.0
            };
            v = STONE_HU + scanner + texture + noise.sample(&mut rng);
        }
        let v = v.clamp(cfg.hu_min, cfg.hu_max);
        volume.push(v as f32 as f64);
    }

    let ehr = draw_record(&mut rng, s, y)?;
    Ok(PatientSample {
        id: format!("s{index:04}"),
        volume: Tensor::new(&[g, g, g], volume)?,
        mask: Tensor::new(&[g, g, g], mask)?,
        ehr,
        label,
    })
}

/// Infectious cases shift urine pH, both leukocyte counts and the gender mix by
/// `signal`-scaled offsets; age, creatinine and location carry no class signal.
fn draw_record(rng: &mut impl Rng, signal: f64, y: f64) -> Result<EhrRecord> {
    let normal = |m: f64, sd: f64| Normal::new(m, sd).expect("valid");
    let age = normal(55.0, 13.0).sample(rng).clamp(18.0, 90.0).round();
    let p_male = 0.6 - 0.3 * signal * y;
    let gender = if rng.random::<f64>() < p_male { Gender::Male } else { Gender::Female };
    let blood_leukocyte = (normal(7.0, 1.8).sample(rng) + 1.5 * signal * y).max(0.5);
    let serum_creatinine = LogNormal::new(85f64.ln(), 0.3).expect("valid").sample(rng);
    let urine_leukocyte = LogNormal::new(3.0 + 1.2 * signal * y, 1.0).expect("valid").sample(rng);
    let urine_ph = (normal(5.9, 0.45).sample(rng) + 1.4 * signal * y).clamp(4.0, 9.0);
    let site = WeightedIndex::new(LOCATION_WEIGHTS).expect("positive weights").sample(rng);
    let record = EhrRecord {
        age,
        gender,
        blood_leukocyte: round_to(blood_leukocyte, 2),
        serum_creatinine: round_to(serum_creatinine, 1),
        urine_leukocyte: round_to(urine_leukocyte, 1),
        urine_ph: round_to(urine_ph, 2),
        stone_location: StoneLocation::ALL[site],
    };
    record.validate()?;
    Ok(record)
}

fn round_to(v: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (v * f).round() / f
}
