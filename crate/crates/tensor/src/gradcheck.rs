//! Central finite-difference gradient checking.
//!
//! The checked function may fail with any error type that tensor errors convert into.

use crate::error::TensorError;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;

/// Evaluate `f` at `x` and return the scalar value without differentiating.
pub fn eval_scalar<F, E>(f: &F, x: &Tensor) -> Result<f64, E>
where
    F: Fn(&Tape, Var) -> Result<Var, E>,
{
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = f(&tape, xv)?;
    Ok(tape.value(y).item())
}

/// Reverse-mode gradient of `f` at `x`; zeros when `f` does not depend on `x`.
pub fn autodiff_grad<F, E>(f: &F, x: &Tensor) -> Result<Tensor, E>
where
    F: Fn(&Tape, Var) -> Result<Var, E>,
    E: From<TensorError>,
{
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(&tape, xv)?;
    let mut grads = tape.backward(y)?;
    Ok(grads
        .take(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape())))
}

/// Max relative error `|g_ad − g_fd| / (|g_fd| + 1e-12)` over every coordinate of `x`.
pub fn grad_check<F, E>(f: F, x: &Tensor, eps: f64) -> Result<f64, E>
where
    F: Fn(&Tape, Var) -> Result<Var, E>,
    E: From<TensorError>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, eps, &coords)
}

/// Relative error of one coordinate, floored so an exact zero does not divide.
pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / (fd.abs() + 1e-12)
}

/// One probed coordinate: its flat index, the reverse-mode and the central-difference derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub autodiff: f64,
    pub finite: f64,
}

impl Probe {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.autodiff, self.finite)
    }
}

/// Both derivatives at each listed coordinate.
pub fn probe_at<F, E>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<Vec<Probe>, E>
where
    F: Fn(&Tape, Var) -> Result<Var, E>,
    E: From<TensorError>,
{
    let ad = autodiff_grad(&f, x)?;
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        out.push(Probe { index: i, autodiff: ad.data()[i], finite: (up - down) / (2.0 * eps) });
    }
    Ok(out)
}

/// As [`grad_check`], restricted to the listed flat coordinates.
pub fn grad_check_at<F, E>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<f64, E>
where
    F: Fn(&Tape, Var) -> Result<Var, E>,
    E: From<TensorError>,
{
    Ok(probe_at(f, x, eps, coords)?.iter().map(Probe::relative_error).fold(0.0, f64::max))
}
