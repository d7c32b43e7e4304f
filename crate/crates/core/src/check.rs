//! Finite-difference gradient checks for every differentiable op and for the
//! composed training loss.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tensor::gradcheck::eval_scalar;
use tensor::{grad_check, probe_at, Probe, Tape, Tensor, Var};

use crate::config::{ClassLosses, GeneratorConfig, ModelConfig};
use crate::data::{generate_sample, prepare, Dataset};
use crate::error::Result;
use crate::losses::{bce_loss, dice_loss, focal_loss, LossWeights};
use crate::model::{Input, LossOptions, Network};
use crate::vtt::EhrStats;

pub const OP_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-4;
/// Round-off quanta allowed in one central difference of the full model.
pub const RESOLUTION_MARGIN: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Coordinates too small for a relative comparison, checked absolutely.
    pub unresolved: Option<Unresolved>,
}

/// Coordinates whose finite-difference gradient lies under the resolution floor.
#[derive(Clone, Copy, Debug)]
pub struct Unresolved {
    pub count: usize,
    pub checked: usize,
    pub floor: f64,
    pub max_abs_err: f64,
    pub abs_tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance && self.unresolved.is_none_or(|u| u.max_abs_err < u.abs_tolerance)
    }
}

fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// `Σ w ⊙ y` for a fixed random `w`, so every output coordinate carries gradient.
fn project(tape: &Tape, y: Var, w: &Tensor) -> Result<Var> {
    let wv = tape.constant(w.clone());
    Ok(tape.sum(tape.mul(y, wv)?))
}

/// Entries of magnitude in [0.5, 1.5] with random sign. A gradient coordinate
/// near zero turns the round-off of a central difference into a large relative
/// error, so the cases keep inputs, projections and kernels away from zero.
/// Convolution sums are long enough to cancel even so, and use positive values.
fn away(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.5..1.5);
        if rng.random::<bool>() { m } else { -m }
    })
}

type OpFn = Box<dyn Fn(&Tape, Var) -> Result<Var>>;

struct OpCase {
    x: Tensor,
    f: OpFn,
}

fn op_case(name: &'static str, rng: &mut ChaCha8Rng) -> OpCase {
    let x34 = away(rng, &[3, 4]);
    let w34 = away(rng, &[3, 4]);
    let w4 = randn(rng, &[4]);
    let other = randn(rng, &[3, 4]);
    let (x, f): (Tensor, OpFn) = match name {
        "add" => (x34, Box::new(move |t, x| { let b = t.constant(w4.clone()); let y = t.add(x, b)?; project(t, y, &w34) })),
        "sub" => (x34, Box::new(move |t, x| { let b = t.constant(other.clone()); let y = t.sub(b, x)?; project(t, y, &w34) })),
        "mul" => (x34, Box::new(move |t, x| { let y = t.mul(x, x)?; project(t, y, &w34) })),
        "div" => {
            let d = uniform(rng, &[3, 4], 0.5, 2.0);
            (d, Box::new(move |t, x| { let b = t.constant(other.clone()); let y = t.div(b, x)?; project(t, y, &w34) }))
        }
        "neg" => (x34, Box::new(move |t, x| project(t, t.neg(x), &w34))),
        "scale" => (x34, Box::new(move |t, x| project(t, t.add_scalar(t.scale(x, -1.7), 0.3), &w34))),
        "relu" => (x34, Box::new(move |t, x| project(t, t.relu(x), &w34))),
        "gelu" => (x34, Box::new(move |t, x| project(t, t.gelu(x), &w34))),
        "sigmoid" => (x34, Box::new(move |t, x| project(t, t.sigmoid(x), &w34))),
        "exp" => (x34, Box::new(move |t, x| project(t, t.exp(x), &w34))),
        "log" => (uniform(rng, &[3, 4], 0.2, 3.0), Box::new(move |t, x| project(t, t.log(x)?, &w34))),
        "pow" => (uniform(rng, &[3, 4], 0.2, 3.0), Box::new(move |t, x| project(t, t.pow(x, 2.5)?, &w34))),
        "clamp" => (uniform(rng, &[3, 4], -1.0, 1.0), Box::new(move |t, x| project(t, t.clamp(x, -0.5, 0.5), &w34))),
        "sum" => (x34, Box::new(move |t, x| { let y = t.mul(x, x)?; Ok(t.sum(y)) })),
        "mean" => (x34, Box::new(move |t, x| { let y = t.mul(x, x)?; Ok(t.mean(y)) })),
        "sum_axis" => {
            let w3 = away(rng, &[3]);
            (x34, Box::new(move |t, x| { let y = t.sum_axis(t.mul(x, x)?, 1)?; project(t, y, &w3) }))
        }
        "matmul" => {
            let b = uniform(rng, &[4, 5], 0.5, 1.5);
            let w35 = uniform(rng, &[3, 5], 0.5, 1.5);
            (x34, Box::new(move |t, x| { let bv = t.constant(b.clone()); let y = t.matmul(x, bv)?; project(t, y, &w35) }))
        }
        "transpose" => {
            let w43 = away(rng, &[4, 3]);
            (x34, Box::new(move |t, x| { let y = t.transpose(x)?; project(t, t.mul(y, y)?, &w43) }))
        }
        "softmax" => (x34, Box::new(move |t, x| { let y = t.softmax(x, 1)?; project(t, y, &w34) })),
        "layer_norm" => {
            let gain = away(rng, &[4]);
            let bias = randn(rng, &[4]);
            (x34, Box::new(move |t, x| {
                let (g, b) = (t.constant(gain.clone()), t.constant(bias.clone()));
                let y = t.layer_norm(x, g, b, 1e-5)?;
                project(t, y, &w34)
            }))
        }
        "conv3d" => {
            let k = uniform(rng, &[2, 2, 3, 3, 3], 0.5, 1.5);
            let w = uniform(rng, &[2, 2, 2, 2], 0.5, 1.5);
            (uniform(rng, &[2, 4, 4, 4], 0.5, 1.5), Box::new(move |t, x| {
                let kv = t.constant(k.clone());
                let y = t.conv3d(x, kv, 2, 1)?;
                project(t, y, &w)
            }))
        }
        "conv3d_kernel" => {
            let input = uniform(rng, &[2, 4, 4, 4], 0.5, 1.5);
            let w = uniform(rng, &[3, 4, 4, 4], 0.5, 1.5);
            (uniform(rng, &[3, 2, 3, 3, 3], 0.5, 1.5), Box::new(move |t, k| {
                let xv = t.constant(input.clone());
                let y = t.conv3d(xv, k, 1, 1)?;
                project(t, y, &w)
            }))
        }
        "conv_transpose3d" => {
            let k = uniform(rng, &[2, 3, 2, 2, 2], 0.5, 1.5);
            let w = uniform(rng, &[3, 4, 4, 4], 0.5, 1.5);
            (uniform(rng, &[2, 2, 2, 2], 0.5, 1.5), Box::new(move |t, x| {
                let kv = t.constant(k.clone());
                let y = t.conv_transpose3d(x, kv, 2)?;
                project(t, y, &w)
            }))
        }
        "conv_transpose3d_kernel" => {
            let input = uniform(rng, &[2, 2, 2, 2], 0.5, 1.5);
            let w = uniform(rng, &[3, 4, 4, 4], 0.5, 1.5);
            (uniform(rng, &[2, 3, 2, 2, 2], 0.5, 1.5), Box::new(move |t, k| {
                let xv = t.constant(input.clone());
                let y = t.conv_transpose3d(xv, k, 2)?;
                project(t, y, &w)
            }))
        }
        "reshape" => {
            let w26 = away(rng, &[2, 6]);
            (x34, Box::new(move |t, x| { let y = t.reshape(t.mul(x, x)?, &[2, 6])?; project(t, y, &w26) }))
        }
        "concat" => {
            let w37 = away(rng, &[3, 7]);
            let extra = randn(rng, &[3, 3]);
            (x34, Box::new(move |t, x| {
                let e = t.constant(extra.clone());
                let y = t.concat(&[t.mul(x, x)?, e], 1)?;
                project(t, y, &w37)
            }))
        }
        "narrow" => {
            let w32 = away(rng, &[3, 2]);
            (x34, Box::new(move |t, x| { let y = t.narrow(t.mul(x, x)?, 1, 1, 2)?; project(t, y, &w32) }))
        }
        "dice_loss" => {
            let g = Tensor::from_fn(&[12], |_| (rng.random::<f64>() < 0.5) as u8 as f64);
            (uniform(rng, &[12], 0.05, 0.95), Box::new(move |t, p| dice_loss(t, p, &g)))
        }
        "bce_loss" => {
            let g = Tensor::from_fn(&[12], |_| (rng.random::<f64>() < 0.5) as u8 as f64);
            (uniform(rng, &[12], 0.05, 0.95), Box::new(move |t, p| bce_loss(t, p, &g)))
        }
        "focal_loss" => {
            let g = Tensor::from_fn(&[12], |_| (rng.random::<f64>() < 0.5) as u8 as f64);
            (uniform(rng, &[12], 0.05, 0.95), Box::new(move |t, p| focal_loss(t, p, &g, 2.0, 0.25)))
        }
        other => unreachable!("no gradient case named {other}"),
    };
    OpCase { x, f }
}

pub const OP_NAMES: [&str; 30] = [
    "add", "sub", "mul", "div", "neg", "scale", "relu", "gelu", "sigmoid", "exp", "log", "pow", "clamp", "sum",
    "mean", "sum_axis", "matmul", "transpose", "softmax", "layer_norm", "conv3d", "conv3d_kernel",
    "conv_transpose3d", "conv_transpose3d_kernel", "reshape", "concat", "narrow", "dice_loss", "bce_loss",
    "focal_loss",
];

/// Worst relative error of each op over `seeds` random inputs.
pub fn op_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    OP_NAMES
        .iter()
        .map(|&name| {
            let mut worst: f64 = 0.0;
            for seed in 0..seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let case = op_case(name, &mut rng);
                worst = worst.max(grad_check(&case.f, &case.x, tensor::DEFAULT_EPS)?);
            }
            Ok(CheckResult { name: name.to_string(), max_rel_err: worst, tolerance: OP_TOLERANCE, unresolved: None })
        })
        .collect()
}

/// Gradient check of the weighted total loss with respect to every model
/// parameter jointly, at `coords` sampled flat coordinates (plus one per
/// parameter tensor), on one synthetic case.
///
/// Fresh initialisation puts zero biases in front of ReLUs, so whole regions of
/// the decoder sit exactly on the kink and a central difference straddles it.
/// Every parameter is therefore jittered first to move the check to a point
/// where the loss is differentiable.
///
/// A central difference carries round-off of about `ε_mach·|f| / 2h`. Where the
/// gradient is within `RESOLUTION_MARGIN / tolerance` of that quantum, the
/// relative error measures round-off and not the derivative (attention key
/// biases, whose gradient is identically zero, are the extreme case). Those
/// coordinates are compared absolutely against a few quanta instead.
pub fn full_model(cfg: &ModelConfig, seed: u64, coords: usize, eps: f64) -> Result<CheckResult> {
    let mut net = Network::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in net.store.values_mut() {
        let noise = uniform(&mut rng, t.shape(), -0.05, 0.05);
        t.data_mut().iter_mut().zip(noise.data()).for_each(|(v, n)| *v += n);
    }
    let gen = GeneratorConfig {
        sample_count: 8,
        volume_side: cfg.volume_side + 4,
        seed,
        ..GeneratorConfig::default()
    };
    let samples = (0..gen.sample_count)
        .map(|i| generate_sample(&gen, i, i % 2 == 1))
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset { config: gen, samples };
    let prepared = prepare(&data, cfg.volume_side, -400.0, 2000.0)?;
    let stats = EhrStats::fit(prepared.iter().map(|s| &s.ehr))?;
    let case = &prepared[1];
    let weights = LossWeights::INITIAL;
    let opts = LossOptions { gamma: 2.0, alpha: 0.25, class_losses: ClassLosses::Both };
    let f = |tape: &Tape, flat: Var| -> Result<Var> {
        let bound = net.store.bind_flat(tape, flat)?;
        let input = Input { volume: &case.volume, ehr: &case.ehr, stats: &stats };
        let fwd = net.forward(tape, &bound, input)?;
        Ok(net.loss(tape, &fwd, &case.mask, case.label as u8 as f64, &weights, &opts)?.total)
    };
    let flat = Tensor::new(&[net.store.numel()], net.store.flatten())?;
    let mut picks: Vec<usize> = sample(&mut rng, flat.len(), coords.min(flat.len())).into_vec();
    let mut offset = 0;
    for t in net.store.values() {
        picks.push(offset + rng.random_range(0..t.len()));
        offset += t.len();
    }
    picks.sort_unstable();
    picks.dedup();

    let quantum = f64::EPSILON * eval_scalar(&f, &flat)?.abs().max(1.0) / (2.0 * eps);
    let floor = RESOLUTION_MARGIN * quantum / MODEL_TOLERANCE;
    let probes = probe_at(f, &flat, eps, &picks)?;
    let (resolved, small): (Vec<&Probe>, Vec<&Probe>) = probes.iter().partition(|p| p.finite.abs() >= floor);
    let max_rel_err = resolved.iter().map(|p| p.relative_error()).fold(0.0, f64::max);
    let unresolved = Unresolved {
        count: small.len(),
        checked: probes.len(),
        floor,
        max_abs_err: small.iter().map(|p| (p.autodiff - p.finite).abs()).fold(0.0, f64::max),
        abs_tolerance: RESOLUTION_MARGIN * quantum,
    };
    Ok(CheckResult {
        name: "full_model_total_loss".into(),
        max_rel_err,
        tolerance: MODEL_TOLERANCE,
        unresolved: Some(unresolved),
    })
}
