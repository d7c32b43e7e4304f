//! Segmentation and classification losses and the Dice-driven weight schedule.

use serde::{Deserialize, Serialize};
use tensor::{Tape, Tensor, Var};

use crate::config::ClassLosses;
use crate::error::{Error, Result};

pub const DICE_EPS: f64 = 1e-7;
pub const PROB_CLAMP: f64 = 1e-7;

fn check_target(tape: &Tape, p: Var, g: &Tensor, op: &str) -> Result<()> {
    let ps = tape.shape(p);
    if ps != g.shape() {
        return Err(Error::Config(format!("{op}: prediction {ps:?} vs target {:?}", g.shape())));
    }
    Ok(())
}

fn one_minus(tape: &Tape, x: Var) -> Var {
    tape.add_scalar(tape.neg(x), 1.0)
}

/// `1 − 2Σpg / (Σp + Σg + ε)`.
pub fn dice_loss(tape: &Tape, p: Var, g: &Tensor) -> Result<Var> {
    check_target(tape, p, g, "dice_loss")?;
    let gv = tape.constant(g.clone());
    let inter = tape.sum(tape.mul(p, gv)?);
    let denom = tape.add_scalar(tape.add(tape.sum(p), tape.sum(gv))?, DICE_EPS);
    let ratio = tape.div(inter, denom)?;
    Ok(one_minus(tape, tape.scale(ratio, 2.0)))
}

/// `−mean[g log p + (1−g) log(1−p)]` with `p` clamped to `[1e-7, 1−1e-7]`.
pub fn bce_loss(tape: &Tape, p: Var, g: &Tensor) -> Result<Var> {
    check_target(tape, p, g, "bce_loss")?;
    let pc = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let gv = tape.constant(g.clone());
    let ng = tape.constant(g.map(|v| 1.0 - v));
    let pos = tape.mul(gv, tape.log(pc)?)?;
    let neg = tape.mul(ng, tape.log(one_minus(tape, pc))?)?;
    Ok(tape.neg(tape.mean(tape.add(pos, neg)?)))
}

/// `−mean[α g (1−p)^γ log p + (1−α)(1−g) p^γ log(1−p)]`, same clamp as [`bce_loss`].
pub fn focal_loss(tape: &Tape, p: Var, g: &Tensor, gamma: f64, alpha: f64) -> Result<Var> {
    check_target(tape, p, g, "focal_loss")?;
    let pc = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let qc = one_minus(tape, pc);
    let ag = tape.constant(g.map(|v| alpha * v));
    let ang = tape.constant(g.map(|v| (1.0 - alpha) * (1.0 - v)));
    let pos = tape.mul(tape.mul(ag, tape.pow(qc, gamma)?)?, tape.log(pc)?)?;
    let neg = tape.mul(tape.mul(ang, tape.pow(pc, gamma)?)?, tape.log(qc)?)?;
    Ok(tape.neg(tape.mean(tape.add(pos, neg)?)))
}

/// `(ω_Dice, ω_BCE, ω_Focal)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dice: f64,
    pub bce: f64,
    pub focal: f64,
}

impl LossWeights {
    /// Weights before the first validation pass.
    pub const INITIAL: LossWeights = LossWeights { dice: 0.8, bce: 0.02, focal: 0.18 };

    /// Constant split: `ω_Class = class_weight`, shared between BCE and focal by `lambda`.
    pub fn fixed(class_weight: f64, lambda: f64) -> Self {
        LossWeights {
            dice: 1.0 - class_weight,
            bce: lambda * class_weight,
            focal: class_weight - lambda * class_weight,
        }
    }

    pub fn class(&self) -> f64 {
        self.bce + self.focal
    }

    /// Hand an absent classification loss's weight to the remaining one.
    pub fn restrict(self, which: ClassLosses) -> Self {
        match which {
            ClassLosses::Both => self,
            ClassLosses::BceOnly => LossWeights { bce: self.class(), focal: 0.0, ..self },
            ClassLosses::FocalOnly => LossWeights { bce: 0.0, focal: self.class(), ..self },
        }
    }
}

/// Next epoch's weights from the validation Dice score, with the default threshold 0.8.
pub fn update_weights(s_dice: f64, lambda: f64) -> Result<LossWeights> {
    update_weights_with_threshold(s_dice, lambda, 0.8)
}

/// Below the threshold the Dice weight is `1 − s`; above it the split freezes at
/// the threshold's values.
pub fn update_weights_with_threshold(s_dice: f64, lambda: f64, threshold: f64) -> Result<LossWeights> {
    if !(0.0..=1.0).contains(&s_dice) {
        return Err(Error::Training(format!("validation Dice {s_dice} outside [0, 1]")));
    }
    let s = if s_dice <= threshold { s_dice } else { threshold };
    let bce = lambda * s;
    Ok(LossWeights { dice: 1.0 - s, bce, focal: s - bce })
}

/// `ω_Dice·L_Dice + ω_BCE·L_BCE + ω_Focal·L_Focal`.
pub fn total_loss(tape: &Tape, dice: Var, bce: Var, focal: Var, w: &LossWeights) -> Result<Var> {
    let a = tape.scale(dice, w.dice);
    let b = tape.scale(bce, w.bce);
    let c = tape.scale(focal, w.focal);
    Ok(tape.add(tape.add(a, b)?, c)?)
}
