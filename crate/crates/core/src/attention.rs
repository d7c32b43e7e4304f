//! Multi-head scaled dot-product attention shared by the encoder and the fusion stages.

use rand::Rng;
use tensor::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{glorot, Bound, ParamId, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttentionParams {
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, e: usize) -> Self {
        let mut mat = |name: &str, rng: &mut _| store.add(format!("{prefix}.{name}"), glorot(rng, e, e));
        let wq = mat("wq", rng);
        let wk = mat("wk", rng);
        let wv = mat("wv", rng);
        let wo = mat("wo", rng);
        let mut bias = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[e]));
        AttentionParams {
            wq,
            bq: bias("bq"),
            wk,
            bk: bias("bk"),
            wv,
            bv: bias("bv"),
            wo,
            bo: bias("bo"),
        }
    }
}

pub struct AttentionOutput {
    /// `[|q|, E]`
    pub out: Var,
    /// Per head `[|q|, |kv|]`, rows summing to one.
    pub weights: Vec<Var>,
}

fn affine(tape: &Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    Ok(tape.add(xw, b)?)
}

/// Queries from `q_src`, keys and values from `kv_src`; heads are concatenated
/// then output-projected.
pub fn attend(
    tape: &Tape,
    bound: &Bound,
    p: &AttentionParams,
    q_src: Var,
    kv_src: Var,
    heads: usize,
) -> Result<AttentionOutput> {
    let (qs, ks) = (tape.shape(q_src), tape.shape(kv_src));
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::Config(format!(
            "attention inputs {qs:?} and {ks:?} must be [n, E] with equal widths"
        )));
    }
    let e = qs[1];
    if heads == 0 || e % heads != 0 {
        return Err(Error::Config(format!("width {e} is not divisible by {heads} heads")));
    }
    let dk = e / heads;
    let q = affine(tape, q_src, bound.var(p.wq), bound.var(p.bq))?;
    let k = affine(tape, kv_src, bound.var(p.wk), bound.var(p.bk))?;
    let v = affine(tape, kv_src, bound.var(p.wv), bound.var(p.bv))?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.narrow(q, 1, h * dk, dk)?,
                tape.narrow(k, 1, h * dk, dk)?,
                tape.narrow(v, 1, h * dk, dk)?,
            )
        };
        let kt = tape.transpose(kh)?;
        let logits = tape.scale(tape.matmul(qh, kt)?, scale);
        let w = tape.softmax(logits, 1)?;
        outs.push(tape.matmul(w, vh)?);
        weights.push(w);
    }
    let joined = if heads == 1 { outs[0] } else { tape.concat(&outs, 1)? };
    let out = affine(tape, joined, bound.var(p.wo), bound.var(p.bo))?;
    Ok(AttentionOutput { out, weights })
}
