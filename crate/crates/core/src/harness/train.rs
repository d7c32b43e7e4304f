use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensor::{Tape, Tensor};

use super::optim::{adam_step, AdamSettings, AdamState, Plateau};
use crate::config::{ModelConfig, TrainConfig, Weighting};
use crate::data::{Fold, Prepared};
use crate::error::{Error, Result};
use crate::losses::{update_weights_with_threshold, LossWeights};
use crate::metrics::{classification_metrics, dice_iou, hd95, roc_auc, Mask, MetricsReport};
use crate::model::{Input, LossOptions, Network};
use crate::vtt::EhrStats;

/// One row of the training log. `weights` are those applied during this epoch;
/// `val_seg_dice` is what the scheduler sees when choosing the next epoch's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub train_total: f64,
    pub train_dice: Option<f64>,
    pub train_bce: f64,
    pub train_focal: f64,
    pub val_total: f64,
    pub val_seg_dice: Option<f64>,
    pub val_acc: f64,
    pub val_auc: Option<f64>,
}

/// Network and the EHR statistics it was trained with.
#[derive(Clone, Debug)]
pub struct Trained {
    pub network: Network,
    pub stats: EhrStats,
}

pub struct FoldOutcome {
    pub fold: usize,
    pub model: Trained,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub report: MetricsReport,
    pub log: Vec<EpochRecord>,
}

pub struct Evaluation {
    pub report: MetricsReport,
    pub probs: Vec<f64>,
    /// Mean weighted loss under the supplied weights.
    pub total_loss: f64,
}

fn loss_options(t: &TrainConfig) -> LossOptions {
    LossOptions { gamma: t.gamma, alpha: t.alpha, class_losses: t.class_losses }
}

/// Inference over `samples`: classification metrics at 0.5, mean per-case Dice,
/// IoU and HD95. An empty predicted mask scores the volume diagonal as its HD95.
pub fn evaluate(
    model: &Trained,
    samples: &[&Prepared],
    weights: &LossWeights,
    train: &TrainConfig,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Training("no samples to evaluate".into()));
    }
    let net = &model.network;
    let opts = loss_options(train);
    let mut probs = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let (mut dice_sum, mut iou_sum, mut hd_sum, mut loss_sum) = (0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let tape = Tape::new();
        let bound = net.store.bind_frozen(&tape);
        let input = Input { volume: &s.volume, ehr: &s.ehr, stats: &model.stats };
        let fwd = net.forward(&tape, &bound, input)?;
        let terms = net.loss(&tape, &fwd, &s.mask, s.label as u8 as f64, weights, &opts)?;
        loss_sum += tape.value(terms.total).item();
        probs.push(tape.value(fwd.prob).item());
        labels.push(s.label);
        if let Some(logits) = fwd.seg_logits {
            let pred = Mask::from_tensor(&tape.value(logits), 0.0)?;
            let truth = Mask::from_tensor(&s.mask, 0.5)?;
            let (d, i) = dice_iou(&pred, &truth)?;
            dice_sum += d;
            iou_sum += i;
            hd_sum += if pred.count() == 0 {
                let [a, b, c] = pred.dims();
                ((a * a + b * b + c * c) as f64).sqrt() * train.voxel_spacing_mm
            } else {
                hd95(&pred, &truth, train.voxel_spacing_mm)?
            };
        }
    }
    let n = samples.len() as f64;
    let cls = classification_metrics(&probs, &labels, 0.5)?;
    let both_classes = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
    let seg = net.segments();
    let report = MetricsReport {
        acc: cls.acc,
        f1: cls.f1,
        recall: cls.recall,
        precision: cls.precision,
        auc: if both_classes { Some(roc_auc(&probs, &labels)?) } else { None },
        dice: seg.then_some(dice_sum / n),
        iou: seg.then_some(iou_sum / n),
        hd95: seg.then_some(hd_sum / n),
    };
    Ok(Evaluation { report, probs, total_loss: loss_sum / n })
}

fn selection_score(r: &MetricsReport) -> f64 {
    match r.dice {
        Some(d) => 0.5 * (r.acc + d),
        None => r.acc,
    }
}

/// Train one fold. EHR statistics come from the fold's training cases only.
pub fn train_fold(
    fold_id: usize,
    fold: &Fold,
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    data: &[Prepared],
) -> Result<FoldOutcome> {
    let ctx = |e: Error| Error::Training(format!("fold {fold_id}: {e}"));
    let train_set: Vec<&Prepared> = fold.train.iter().map(|&i| &data[i]).collect();
    let val_set: Vec<&Prepared> = fold.val.iter().map(|&i| &data[i]).collect();
    let stats = EhrStats::fit(train_set.iter().map(|s| &s.ehr)).map_err(ctx)?;
    let network = Network::new(model_cfg, train.seed.wrapping_add(fold_id as u64)).map_err(ctx)?;
    let mut model = Trained { network, stats };
    let opts = loss_options(train);

    let mut weights = match train.weighting {
        Weighting::Dynamic => LossWeights::INITIAL,
        Weighting::Fixed => LossWeights::fixed(train.fixed_class_weight, train.lambda),
    };
    let mut adam = AdamState::new(&model.network.store);
    let mut plateau = Plateau::new(
        train.lr,
        train.plateau_factor,
        train.plateau_patience,
        train.plateau_min_delta,
        train.lr_floor,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    rng.set_stream(fold_id as u64 + 1);

    let mut log = Vec::with_capacity(train.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, usize, Network, MetricsReport)> = None;

    for epoch in 1..=train.epochs {
        let lr = plateau.lr;
        let settings = AdamSettings {
            lr,
            beta1: train.beta1,
            beta2: train.beta2,
            eps: train.adam_eps,
            weight_decay: train.weight_decay,
        };
        order.shuffle(&mut rng);
        let (mut tot, mut dice, mut bce, mut focal) = (0.0, 0.0, 0.0, 0.0);
        for (b, batch) in order.chunks(train.batch_size).enumerate() {
            let net = &model.network;
            let mut acc: Vec<Tensor> = net.store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
            for &i in batch {
                let s = train_set[i];
                let tape = Tape::new();
                let bound = net.store.bind(&tape);
                let input = Input { volume: &s.volume, ehr: &s.ehr, stats: &model.stats };
                let fwd = net.forward(&tape, &bound, input).map_err(ctx)?;
                let terms = net
                    .loss(&tape, &fwd, &s.mask, s.label as u8 as f64, &weights, &opts)
                    .map_err(ctx)?;
                let total = tape.value(terms.total).item();
                if !total.is_finite() {
                    return Err(Error::Training(format!(
                        "fold {fold_id}: non-finite loss at epoch {epoch}, batch {b}, sample {}",
                        s.id
                    )));
                }
                tot += total;
                dice += terms.dice.map_or(0.0, |d| tape.value(d).item());
                bce += tape.value(terms.bce).item();
                focal += tape.value(terms.focal).item();
                let mut grads = tape.backward(terms.total).map_err(|e| ctx(e.into()))?;
                for (a, g) in acc.iter_mut().zip(bound.gradients(&mut grads, &net.store)) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for a in &mut acc {
                a.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            adam_step(&mut model.network.store, &acc, &mut adam, &settings)
                .map_err(|e| Error::Training(format!("fold {fold_id}, epoch {epoch}, batch {b}: {e}")))?;
        }
        let n = train_set.len() as f64;
        let eval = evaluate(&model, &val_set, &weights, train).map_err(ctx)?;
        let r = eval.report;
        log.push(EpochRecord {
            fold: fold_id,
            epoch,
            lr,
            weights,
            train_total: tot / n,
            train_dice: model.network.segments().then_some(dice / n),
            train_bce: bce / n,
            train_focal: focal / n,
            val_total: eval.total_loss,
            val_seg_dice: r.dice,
            val_acc: r.acc,
            val_auc: r.auc,
        });
        if let (Weighting::Dynamic, Some(s_dice)) = (train.weighting, r.dice) {
            weights = update_weights_with_threshold(s_dice, train.lambda, train.dice_threshold).map_err(ctx)?;
        }
        plateau.observe(eval.total_loss);
        let score = selection_score(&r);
        if best.as_ref().is_none_or(|(b, ..)| score > *b) {
            best = Some((score, epoch, model.network.clone(), r));
        }
    }

    match best {
        Some((_, epoch, network, report)) => Ok(FoldOutcome {
            fold: fold_id,
            model: Trained { network, stats: model.stats },
            best_epoch: epoch,
            report,
            log,
        }),
        None => {
            let report = evaluate(&model, &val_set, &weights, train).map_err(ctx)?.report;
            Ok(FoldOutcome { fold: fold_id, model, best_epoch: 0, report, log })
        }
    }
}
