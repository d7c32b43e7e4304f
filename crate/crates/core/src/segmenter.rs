//! Transformer encoder with tapped hidden states and a convolutional upsampling decoder.

use rand::Rng;
use tensor::{Tape, Tensor, Var};

use crate::attention::{attend, AttentionParams};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{glorot, he, Bound, ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, prefix: &str, e: usize) -> Self {
        LayerNormParams {
            gain: store.add(format!("{prefix}.gain"), Tensor::ones(&[e])),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[e])),
        }
    }

    pub fn apply(&self, tape: &Tape, bound: &Bound, x: Var) -> Result<Var> {
        Ok(tape.layer_norm(x, bound.var(self.gain), bound.var(self.bias), LN_EPS)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl BlockParams {
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, e: usize) -> Self {
        let ln1 = LayerNormParams::init(store, &format!("{prefix}.ln1"), e);
        let attn = AttentionParams::init(store, rng, &format!("{prefix}.attn"), e);
        let ln2 = LayerNormParams::init(store, &format!("{prefix}.ln2"), e);
        let w1 = store.add(format!("{prefix}.mlp.w1"), glorot(rng, e, 4 * e));
        let b1 = store.add(format!("{prefix}.mlp.b1"), Tensor::zeros(&[4 * e]));
        let w2 = store.add(format!("{prefix}.mlp.w2"), glorot(rng, 4 * e, e));
        let b2 = store.add(format!("{prefix}.mlp.b2"), Tensor::zeros(&[e]));
        BlockParams { ln1, attn, ln2, w1, b1, w2, b2 }
    }
}

/// Pre-norm block: `x + MHSA(LN(x))`, then `+ MLP(LN(·))` with a 4E GELU hidden layer.
pub fn transformer_block(tape: &Tape, bound: &Bound, p: &BlockParams, x: Var, heads: usize) -> Result<Var> {
    let h = p.ln1.apply(tape, bound, x)?;
    let a = attend(tape, bound, &p.attn, h, h, heads)?.out;
    let x = tape.add(x, a)?;
    let h = p.ln2.apply(tape, bound, x)?;
    let h = tape.add(tape.matmul(h, bound.var(p.w1))?, bound.var(p.b1))?;
    let h = tape.gelu(h);
    let h = tape.add(tape.matmul(h, bound.var(p.w2))?, bound.var(p.b2))?;
    Ok(tape.add(x, h)?)
}

/// Hidden states at the four tapped layers, shallowest first; `z[3]` is the last layer.
#[derive(Clone, Copy, Debug)]
pub struct EncoderTaps {
    pub z: [Var; 4],
}

pub fn vit_encode(
    tape: &Tape,
    bound: &Bound,
    blocks: &[BlockParams],
    tokens: Var,
    cfg: &ModelConfig,
) -> Result<EncoderTaps> {
    if blocks.len() != cfg.encoder_layers {
        return Err(Error::Config(format!(
            "{} blocks supplied for {} encoder layers",
            blocks.len(),
            cfg.encoder_layers
        )));
    }
    let mut x = tokens;
    let mut outputs = Vec::with_capacity(blocks.len());
    for b in blocks {
        x = transformer_block(tape, bound, b, x, cfg.heads)?;
        outputs.push(x);
    }
    let z = std::array::from_fn(|i| outputs[cfg.tap_indices[i] - 1]);
    Ok(EncoderTaps { z })
}

/// `[N, E]` tokens → `[E, g, g, g]` feature grid, inverting the patch order.
pub fn tokens_to_grid(tape: &Tape, tokens: Var, g: usize) -> Result<Var> {
    let e = tape.shape(tokens)[1];
    let t = tape.transpose(tokens)?;
    Ok(tape.reshape(t, &[e, g, g, g])?)
}

#[derive(Clone, Copy, Debug)]
pub struct ConvParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl ConvParams {
    fn conv(store: &mut ParamStore, rng: &mut impl Rng, name: String, c_out: usize, c_in: usize, k: usize) -> Self {
        ConvParams {
            w: store.add(format!("{name}.w"), he(rng, &[c_out, c_in, k, k, k], c_in * k * k * k)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[c_out, 1, 1, 1])),
        }
    }

    /// ×2 transpose convolution, kernel layout `[C_in, C_out, 2, 2, 2]`.
    fn up(store: &mut ParamStore, rng: &mut impl Rng, name: String, c_in: usize, c_out: usize) -> Self {
        ConvParams {
            w: store.add(format!("{name}.w"), he(rng, &[c_in, c_out, 2, 2, 2], c_in)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[c_out, 1, 1, 1])),
        }
    }

    fn conv3(&self, tape: &Tape, bound: &Bound, x: Var, padding: usize) -> Result<Var> {
        let y = tape.conv3d(x, bound.var(self.w), 1, padding)?;
        Ok(tape.add(y, bound.var(self.b))?)
    }

    fn upsample(&self, tape: &Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv_transpose3d(x, bound.var(self.w), 2)?;
        Ok(tape.add(y, bound.var(self.b))?)
    }
}

#[derive(Clone, Debug)]
pub enum Skip {
    /// A shallower tap lifted to this stage's resolution by a chain of ×2 upsamplings.
    Tap { tap: usize, chain: Vec<ConvParams> },
    /// The raw volume through one 3³ convolution, used at full resolution.
    Volume(ConvParams),
}

#[derive(Clone, Debug)]
pub struct StageParams {
    pub up: ConvParams,
    pub skip: Skip,
    pub fuse: ConvParams,
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub stages: Vec<StageParams>,
    pub head: ConvParams,
}

impl DecoderParams {
    /// Stage `s` (coarsest first) upsamples to `g·2^(s+1)`. Its skip is tap
    /// `z[2 - s]` except at the last stage, which uses the raw volume.
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Result<Self> {
        let n = cfg.decoder_stages();
        if cfg.decoder_channels.len() != n {
            return Err(Error::Config(format!(
                "decoder needs {n} channel counts, got {:?}",
                cfg.decoder_channels
            )));
        }
        let e = cfg.embed_dim;
        let mut stages = Vec::with_capacity(n);
        let mut c_prev = e;
        for (s, &c) in cfg.decoder_channels.iter().enumerate() {
            let up = ConvParams::up(store, rng, format!("dec{s}.up"), c_prev, c);
            let skip = if s + 1 == n {
                Skip::Volume(ConvParams::conv(store, rng, format!("dec{s}.skip"), c, 1, 3))
            } else {
                let chain = (0..=s)
                    .map(|j| {
                        let c_in = if j == 0 { e } else { c };
                        ConvParams::up(store, rng, format!("dec{s}.skip{j}"), c_in, c)
                    })
                    .collect();
                Skip::Tap { tap: 2 - s, chain }
            };
            let fuse = ConvParams::conv(store, rng, format!("dec{s}.fuse"), c, 2 * c, 3);
            stages.push(StageParams { up, skip, fuse });
            c_prev = c;
        }
        let head = ConvParams::conv(store, rng, "dec.head".into(), 1, c_prev, 1);
        Ok(DecoderParams { stages, head })
    }
}

/// Segmentation logits `[1, S, S, S]` from encoder taps and the `[S,S,S]` input volume.
pub fn unetr_decode(
    tape: &Tape,
    bound: &Bound,
    p: &DecoderParams,
    taps: &EncoderTaps,
    volume: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    let g = cfg.grid_side();
    let s_side = cfg.volume_side;
    let mut x = tokens_to_grid(tape, taps.z[3], g)?;
    for stage in &p.stages {
        let up = tape.relu(stage.up.upsample(tape, bound, x)?);
        let skip = match &stage.skip {
            Skip::Tap { tap, chain } => {
                let mut h = tokens_to_grid(tape, taps.z[*tap], g)?;
                for c in chain {
                    h = tape.relu(c.upsample(tape, bound, h)?);
                }
                h
            }
            Skip::Volume(c) => {
                let v = tape.reshape(volume, &[1, s_side, s_side, s_side])?;
                tape.relu(c.conv3(tape, bound, v, 1)?)
            }
        };
        let joined = tape.concat(&[up, skip], 0)?;
        x = tape.relu(stage.fuse.conv3(tape, bound, joined, 1)?);
    }
    p.head.conv3(tape, bound, x, 0)
}
