//! Fusion of vision, clinical and segmentation features, and the classification head.
//!
//! The image-record stage attends from vision tokens to EHR tokens; the
//! segmentation stage attends from encoder features to that result. Each stage
//! adds its query back as a residual and layer-normalises. Either stage can be
//! swapped for a concatenate-and-project layer.

use rand::Rng;
use tensor::{Tape, Tensor, Var};

use crate::attention::{attend, AttentionOutput, AttentionParams};
use crate::config::FusionMode;
use crate::error::{Error, Result};
use crate::params::{glorot, Bound, ParamId, ParamStore};
use crate::segmenter::LayerNormParams;

pub use crate::attention::attend as cross_attention;

#[derive(Clone, Copy, Debug)]
pub enum Mixer {
    Attention(AttentionParams),
    /// `[2E, E]` projection of the concatenated query and context.
    Concat { w: ParamId, b: ParamId },
}

#[derive(Clone, Copy, Debug)]
pub struct FusionParams {
    pub mixer: Mixer,
    pub norm: LayerNormParams,
}

impl FusionParams {
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, e: usize, mode: FusionMode) -> Self {
        let mixer = match mode {
            FusionMode::Attention => Mixer::Attention(AttentionParams::init(store, rng, &format!("{prefix}.attn"), e)),
            FusionMode::Concat => Mixer::Concat {
                w: store.add(format!("{prefix}.proj.w"), glorot(rng, 2 * e, e)),
                b: store.add(format!("{prefix}.proj.b"), Tensor::zeros(&[e])),
            },
        };
        let norm = LayerNormParams::init(store, &format!("{prefix}.ln"), e);
        FusionParams { mixer, norm }
    }
}

/// Result of one fusion stage; `weights` is empty for the concatenation mixer.
pub struct Fused {
    pub out: Var,
    pub weights: Vec<Var>,
}

fn residual_norm(tape: &Tape, bound: &Bound, p: &FusionParams, query: Var, mixed: Var) -> Result<Var> {
    let r = tape.add(query, mixed)?;
    p.norm.apply(tape, bound, r)
}

fn concat_mix(tape: &Tape, bound: &Bound, w: ParamId, b: ParamId, query: Var, context: Var) -> Result<Var> {
    let joined = tape.concat(&[query, context], 1)?;
    Ok(tape.add(tape.matmul(joined, bound.var(w))?, bound.var(b))?)
}

fn check_width(tape: &Tape, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(Error::Config(format!("fusion inputs {sa:?} and {sb:?} must be [n, E] with equal widths")));
    }
    Ok(())
}

/// CT-EHR fusion: `LN(vision + CrossAttn(vision → ehr))`, shape `[N, E]`.
///
/// The concatenation variant pairs every vision token with the mean EHR token.
pub fn cea(tape: &Tape, bound: &Bound, p: &FusionParams, vision: Var, ehr: Var, heads: usize) -> Result<Fused> {
    check_width(tape, vision, ehr)?;
    match p.mixer {
        Mixer::Attention(a) => {
            let AttentionOutput { out, weights } = attend(tape, bound, &a, vision, ehr, heads)?;
            Ok(Fused { out: residual_norm(tape, bound, p, vision, out)?, weights })
        }
        Mixer::Concat { w, b } => {
            let n = tape.shape(vision)[0];
            let e = tape.shape(ehr)[1];
            let pooled = tape.reshape(tape.mean_axis(ehr, 0)?, &[1, e])?;
            let ones = tape.constant(Tensor::ones(&[n, 1]));
            let context = tape.matmul(ones, pooled)?;
            let mixed = concat_mix(tape, bound, w, b, vision, context)?;
            Ok(Fused { out: residual_norm(tape, bound, p, vision, mixed)?, weights: Vec::new() })
        }
    }
}

/// Segmentation-guided fusion: `LN(z + CrossAttn(z → cefr))`, shape `[N, E]`.
pub fn sma(tape: &Tape, bound: &Bound, p: &FusionParams, z: Var, cefr: Var, heads: usize) -> Result<Fused> {
    check_width(tape, z, cefr)?;
    match p.mixer {
        Mixer::Attention(a) => {
            let AttentionOutput { out, weights } = attend(tape, bound, &a, z, cefr, heads)?;
            Ok(Fused { out: residual_norm(tape, bound, p, z, out)?, weights })
        }
        Mixer::Concat { w, b } => {
            if tape.shape(z)[0] != tape.shape(cefr)[0] {
                return Err(Error::Config("concatenation fusion needs equal token counts".into()));
            }
            let mixed = concat_mix(tape, bound, w, b, z, cefr)?;
            Ok(Fused { out: residual_norm(tape, bound, p, z, mixed)?, weights: Vec::new() })
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl HeadParams {
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, e: usize) -> Self {
        HeadParams {
            w: store.add(format!("{prefix}.w"), glorot(rng, e, 1)),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[1])),
        }
    }
}

/// Mean-pool tokens, project `E → 1`; returns the scalar logit.
pub fn classify_logit(tape: &Tape, bound: &Bound, p: &HeadParams, tokens: Var) -> Result<Var> {
    let e = tape.shape(tokens)[1];
    let pooled = tape.reshape(tape.mean_axis(tokens, 0)?, &[1, e])?;
    let z = tape.add(tape.matmul(pooled, bound.var(p.w))?, bound.var(p.b))?;
    Ok(tape.reshape(z, &[])?)
}

/// Infectivity probability in `(0, 1)`.
pub fn classify(tape: &Tape, bound: &Bound, p: &HeadParams, tokens: Var) -> Result<Var> {
    Ok(tape.sigmoid(classify_logit(tape, bound, p, tokens)?))
}
