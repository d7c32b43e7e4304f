//! The full network: token embedding, encoder, decoder, fusion and head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensor::{Tape, Tensor, Var};

use crate::config::{ClassLosses, Modalities, ModelConfig};
use crate::error::{Error, Result};
use crate::losses::{bce_loss, dice_loss, focal_loss, total_loss, LossWeights};
use crate::msaf::{cea, classify_logit, sma, FusionParams, HeadParams};
use crate::params::{normal, Bound, ParamId, ParamStore};
use crate::segmenter::{unetr_decode, vit_encode, BlockParams, DecoderParams, EncoderTaps};
use crate::vtt::{embed_patches, encode_ehr, patchify, EhrRecord, EhrStats, EHR_FEATURE_WIDTH};

#[derive(Clone, Debug)]
struct Vision {
    projection: ParamId,
    pos: ParamId,
    blocks: Vec<BlockParams>,
    decoder: DecoderParams,
}

#[derive(Clone, Debug)]
struct Layout {
    vision: Option<Vision>,
    ehr_embed: Option<ParamId>,
    cea: Option<FusionParams>,
    sma: Option<FusionParams>,
    head: HeadParams,
}

#[derive(Clone, Debug)]
pub struct Network {
    cfg: ModelConfig,
    pub store: ParamStore,
    layout: Layout,
}

/// One case as the network consumes it: a window-normalised `[S,S,S]` volume and its record.
#[derive(Clone, Copy)]
pub struct Input<'a> {
    pub volume: &'a Tensor,
    pub ehr: &'a EhrRecord,
    pub stats: &'a EhrStats,
}

/// Every intermediate the tests and the trainer look at. Absent modalities leave `None`.
#[derive(Clone, Debug)]
pub struct Forward {
    pub vision_tokens: Option<Var>,
    pub ehr_tokens: Option<Var>,
    pub taps: Option<EncoderTaps>,
    pub seg_logits: Option<Var>,
    pub cefr: Option<Var>,
    pub msfr: Option<Var>,
    pub class_logit: Var,
    pub prob: Var,
}

/// Constants of the classification losses.
#[derive(Clone, Copy, Debug)]
pub struct LossOptions {
    pub gamma: f64,
    pub alpha: f64,
    pub class_losses: ClassLosses,
}

pub struct LossTerms {
    pub total: Var,
    pub dice: Option<Var>,
    pub bce: Var,
    pub focal: Var,
}

impl Network {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = cfg.embed_dim;
        let vision = if cfg.modalities == Modalities::EhrOnly {
            None
        } else {
            let p3 = cfg.patch_side.pow(3);
            let projection = store.add("embed.proj", normal(&mut rng, &[p3, e], (1.0 / p3 as f64).sqrt()));
            let pos = store.add("embed.pos", normal(&mut rng, &[cfg.token_count(), e], 0.02));
            let blocks = (0..cfg.encoder_layers)
                .map(|l| BlockParams::init(&mut store, &mut rng, &format!("enc{l}"), e))
                .collect();
            let decoder = DecoderParams::init(&mut store, &mut rng, cfg)?;
            Some(Vision { projection, pos, blocks, decoder })
        };
        let ehr_embed = (cfg.modalities != Modalities::CtOnly)
            .then(|| store.add("ehr.embed", normal(&mut rng, &[EHR_FEATURE_WIDTH, e], 1.0 / (e as f64).sqrt())));
        let fused = cfg.modalities == Modalities::Both;
        let cea = fused.then(|| FusionParams::init(&mut store, &mut rng, "cea", e, cfg.cea));
        let sma = fused.then(|| FusionParams::init(&mut store, &mut rng, "sma", e, cfg.sma));
        let head = HeadParams::init(&mut store, &mut rng, "head", e);
        Ok(Network {
            cfg: cfg.clone(),
            store,
            layout: Layout { vision, ehr_embed, cea, sma, head },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn segments(&self) -> bool {
        self.layout.vision.is_some()
    }

    pub fn forward(&self, tape: &Tape, bound: &Bound, input: Input<'_>) -> Result<Forward> {
        let cfg = &self.cfg;
        let l = &self.layout;
        let ehr_tokens = match l.ehr_embed {
            Some(id) => Some(encode_ehr(tape, input.ehr, input.stats, bound.var(id))?),
            None => None,
        };
        let mut vision_tokens = None;
        let mut taps_out = None;
        let mut seg_logits = None;
        let mut cefr_out = None;
        let mut msfr_out = None;
        let pooled_source = match &l.vision {
            None => ehr_tokens.ok_or_else(|| Error::Config("network has neither modality".into()))?,
            Some(v) => {
                let s = input.volume.shape();
                if s != [cfg.volume_side; 3] {
                    return Err(Error::Config(format!(
                        "volume {s:?} does not match volume_side {}",
                        cfg.volume_side
                    )));
                }
                let patches = tape.constant(patchify(input.volume, cfg.patch_side)?);
                let tokens = embed_patches(tape, patches, bound.var(v.projection), bound.var(v.pos))?;
                let taps = vit_encode(tape, bound, &v.blocks, tokens, cfg)?;
                let vol = tape.constant(input.volume.clone());
                seg_logits = Some(unetr_decode(tape, bound, &v.decoder, &taps, vol, cfg)?);
                vision_tokens = Some(tokens);
                taps_out = Some(taps);
                let query = self.sma_query(tape, &taps)?;
                match (&l.cea, &l.sma, ehr_tokens) {
                    (Some(c), Some(m), Some(ehr)) => {
                        let cefr = cea(tape, bound, c, tokens, ehr, cfg.heads)?.out;
                        let msfr = sma(tape, bound, m, query, cefr, cfg.heads)?.out;
                        cefr_out = Some(cefr);
                        msfr_out = Some(msfr);
                        msfr
                    }
                    _ => query,
                }
            }
        };
        let class_logit = classify_logit(tape, bound, &l.head, pooled_source)?;
        Ok(Forward {
            vision_tokens,
            ehr_tokens,
            taps: taps_out,
            seg_logits,
            cefr: cefr_out,
            msfr: msfr_out,
            class_logit,
            prob: tape.sigmoid(class_logit),
        })
    }

    /// Mean of the taps selected by `sma_taps`.
    fn sma_query(&self, tape: &Tape, taps: &EncoderTaps) -> Result<Var> {
        let sel = &self.cfg.sma_taps;
        let mut acc = taps.z[sel[0] - 1];
        for &t in &sel[1..] {
            acc = tape.add(acc, taps.z[t - 1])?;
        }
        Ok(if sel.len() == 1 { acc } else { tape.scale(acc, 1.0 / sel.len() as f64) })
    }

    /// Weighted training loss for one case. Without a segmentation branch the
    /// classification weights are renormalised to sum to one.
    pub fn loss(
        &self,
        tape: &Tape,
        fwd: &Forward,
        mask: &Tensor,
        label: f64,
        weights: &LossWeights,
        opts: &LossOptions,
    ) -> Result<LossTerms> {
        let target = Tensor::scalar(label);
        let bce = bce_loss(tape, fwd.prob, &target)?;
        let focal = focal_loss(tape, fwd.prob, &target, opts.gamma, opts.alpha)?;
        let w = weights.restrict(opts.class_losses);
        match fwd.seg_logits {
            Some(logits) => {
                let s = self.cfg.volume_side;
                let g = mask.reshaped(&[1, s, s, s])?;
                let p = tape.sigmoid(logits);
                let dice = dice_loss(tape, p, &g)?;
                let total = total_loss(tape, dice, bce, focal, &w)?;
                Ok(LossTerms { total, dice: Some(dice), bce, focal })
            }
            None => {
                let c = w.class();
                let only = LossWeights { dice: 0.0, bce: w.bce / c, focal: w.focal / c };
                let zero = tape.constant(Tensor::scalar(0.0));
                let total = total_loss(tape, zero, bce, focal, &only)?;
                Ok(LossTerms { total, dice: None, bce, focal })
            }
        }
    }
}
