use tensor::Tensor;

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moment buffers per parameter, plus the step count.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState { m: zeros(), v: zeros(), step: 0 }
    }
}

/// One bias-corrected Adam update with L2 weight decay folded into the gradient.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, s: &AdamSettings) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Training(format!(
            "{} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    for id in store.ids() {
        let g = &grads[id.index()];
        if g.shape() != store.get(id).shape() {
            return Err(Error::Training(format!(
                "gradient {:?} does not match parameter `{}` {:?}",
                g.shape(),
                store.name(id),
                store.get(id).shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter `{}`",
                store.name(id)
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - s.beta1.powi(t);
    let bc2 = 1.0 - s.beta2.powi(t);
    for id in store.ids() {
        let i = id.index();
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let theta = store.get_mut(id).data_mut();
        for j in 0..theta.len() {
            let gj = g[j] + s.weight_decay * theta[j];
            m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * gj;
            v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            theta[j] -= s.lr * mhat / (vhat.sqrt() + s.eps);
        }
    }
    Ok(())
}

/// Multiplies the learning rate by `factor` once the monitored loss has gone
/// more than `patience` epochs without beating its best by `min_delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub floor: f64,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize, min_delta: f64, floor: f64) -> Self {
        Plateau {
            lr,
            factor,
            patience,
            min_delta,
            floor,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feed one epoch's loss; returns the learning rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                self.lr = (self.lr * self.factor).max(self.floor);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
