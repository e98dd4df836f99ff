//! Deterministic trainer for the toy detector: SGD with momentum and
//! decoupled weight decay, cosine learning-rate decay, task-aligned
//! assignment shared by both loss arms, and per-epoch validation mAP.
//!
//! Batch samples evaluate in parallel but gradients reduce in sample order,
//! so runs are bit-identical across thread counts.

use super::net::{
    backward_detect, decode_anchor_preds, detections_from_preds, forward_detect, img_to_tensor,
    loss_grads_to_head, NetGrads, ToyNet,
};
use super::{SynthSample, NUM_CLASSES};
use crate::enhance::{enhance_pipeline, EnhanceConfig};
use crate::eval::{mean_ap, Detection, GroundTruth};
use crate::fgiou::{
    fgiou_with_assignment, iou_with_grad, task_aligned_assign, AnchorPreds, AssignResult,
    FocalParams, GtBox, LossBreakdown, LossGrads, LossWeights,
};
use crate::tensor::{Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Full training configuration; flags select the ablation arms.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub seed: u64,
    pub use_dpsa: bool,
    pub use_fgiou: bool,
    pub use_enhance: bool,
    pub loss_weights: LossWeights,
    pub focal: FocalParams,
    /// Early stopping patience in epochs; None trains the full schedule.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            momentum: 0.937,
            weight_decay: 0.0005,
            batch: 16,
            seed: 0,
            use_dpsa: false,
            use_fgiou: false,
            use_enhance: false,
            loss_weights: LossWeights::default(),
            focal: FocalParams::default(),
            patience: None,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_map50: f64,
    pub val_map50_95: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: ToyNet<f32>,
    pub log: Vec<EpochRecord>,
    /// Dataset indices of the held-out split.
    pub val_indices: Vec<usize>,
    pub val_detections: Vec<Detection>,
    pub val_gts: Vec<GroundTruth>,
    pub final_map50: f64,
    pub final_map50_95: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("loss diverged (non-finite) at optimizer step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training requires at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
}

/// SGD with momentum and decoupled weight decay:
/// v <- m*v + g; p <- p - lr*v - lr*wd*p.
struct Sgd {
    velocity: Vec<Tensor<f32>>,
    momentum: f32,
    weight_decay: f32,
}

impl Sgd {
    fn new(net: &mut ToyNet<f32>, momentum: f32, weight_decay: f32) -> Self {
        let velocity = net.params_mut().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { velocity, momentum, weight_decay }
    }

    fn step(&mut self, params: Vec<&mut Tensor<f32>>, grads: &[&Tensor<f32>], lr: f32) {
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for i in 0..p.len() {
                let vel = self.momentum * v.data()[i] + g.data()[i];
                v.data_mut()[i] = vel;
                let cur = p.data()[i];
                p.data_mut()[i] = cur - lr * vel - lr * self.weight_decay * cur;
            }
        }
    }
}

fn safe_ln(v: f64) -> f64 {
    v.max(1e-12).ln()
}

/// Baseline loss arm: (1 - IoU) box regression, plain BCE classification,
/// plain BCE objectness with binary foreground targets, on the same
/// assignment and with the same component weights. The LossBreakdown's
/// giou/focal/obj_focal slots carry these baseline components.
pub fn baseline_with_assignment(
    pred: &AnchorPreds,
    gts: &[GtBox],
    assign: &AssignResult,
    w: &LossWeights,
) -> (LossBreakdown, LossGrads) {
    let num_anchors = pred.boxes.len();
    let num_pos = assign.num_foreground();
    let pos_norm = 1.0 / num_pos.max(1) as f64;
    let all_norm = 1.0 / num_anchors.max(1) as f64;

    let bce = |p: f64, t: f64| -(t * safe_ln(p) + (1.0 - t) * safe_ln(1.0 - p));
    let bce_grad = |p: f64, t: f64| {
        -(t * if p > 1e-12 { 1.0 / p } else { 0.0 }
            - (1.0 - t) * if 1.0 - p > 1e-12 { 1.0 / (1.0 - p) } else { 0.0 })
    };

    let mut box_sum = 0.0;
    let mut cls_sum = 0.0;
    let mut obj_sum = 0.0;
    let mut d_boxes = vec![[0.0; 4]; num_anchors];
    let mut d_scores: Vec<Vec<f64>> =
        pred.class_scores.iter().map(|s| vec![0.0; s.len()]).collect();
    let mut d_obj = vec![0.0; num_anchors];

    for ai in 0..num_anchors {
        let fg = assign.fg_mask[ai];
        if fg {
            let gt = &gts[assign.matched_gt[ai]];
            let (iou_v, iou_g) = iou_with_grad(&pred.boxes[ai], &gt.bbox);
            box_sum += 1.0 - iou_v;
            for k in 0..4 {
                d_boxes[ai][k] = -w.w_box * pos_norm * iou_g[k];
            }
            let nc = pred.class_scores[ai].len() as f64;
            for (c, &p) in pred.class_scores[ai].iter().enumerate() {
                let t = if c == gt.class_id { 1.0 } else { 0.0 };
                cls_sum += bce(p, t) / nc;
                d_scores[ai][c] = w.w_cls * pos_norm * bce_grad(p, t) / nc;
            }
        }
        let t = if fg { 1.0 } else { 0.0 };
        obj_sum += bce(pred.objectness[ai], t);
        d_obj[ai] = w.w_obj * all_norm * bce_grad(pred.objectness[ai], t);
    }

    let box_loss = box_sum * pos_norm;
    let cls_loss = cls_sum * pos_norm;
    let obj_loss = obj_sum * all_norm;
    (
        LossBreakdown {
            giou: box_loss,
            focal: cls_loss,
            obj_focal: obj_loss,
            total: w.w_box * box_loss + w.w_cls * cls_loss + w.w_obj * obj_loss,
            num_pos,
        },
        LossGrads { d_boxes, d_class_scores: d_scores, d_objectness: d_obj },
    )
}

/// Loss + head-gradient for one sample, on either arm.
fn sample_loss(
    net: &ToyNet<f32>,
    x: &Tensor<f32>,
    gts: &[GtBox],
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, NetGrads<f32>), TensorError> {
    let (head, cache) = forward_detect(net, x)?;
    let (preds, aux) = decode_anchor_preds(&head);
    let assign = task_aligned_assign(&preds.class_scores, &preds.boxes, &preds.centers, gts);
    let (breakdown, grads) = if cfg.use_fgiou {
        fgiou_with_assignment(&preds, gts, &assign, &cfg.focal, &cfg.loss_weights)
    } else {
        baseline_with_assignment(&preds, gts, &assign, &cfg.loss_weights)
    };
    let dhead = loss_grads_to_head::<f32>(&grads, &preds, &aux, head.shape());
    let net_grads = backward_detect(net, x, &cache, &dhead)?;
    Ok((breakdown, net_grads))
}

fn sample_gts(sample: &SynthSample) -> Vec<GtBox> {
    sample.objects.iter().map(|&(class_id, bbox)| GtBox { bbox, class_id }).collect()
}

fn ground_truths(samples: &[SynthSample], indices: &[usize]) -> Vec<GroundTruth> {
    let mut out = Vec::new();
    for &i in indices {
        for &(class_id, bbox) in &samples[i].objects {
            out.push(GroundTruth { image_id: i as i64, class_id, bbox });
        }
    }
    out
}

fn evaluate(
    net: &ToyNet<f32>,
    inputs: &[Tensor<f32>],
    indices: &[usize],
) -> Result<Vec<Detection>, TensorError> {
    let per_image: Result<Vec<Vec<Detection>>, TensorError> = indices
        .par_iter()
        .map(|&i| {
            let (head, _) = forward_detect(net, &inputs[i])?;
            let (preds, _) = decode_anchor_preds(&head);
            Ok(detections_from_preds(&preds, i as i64))
        })
        .collect();
    Ok(per_image?.into_iter().flatten().collect())
}

/// Train on an 80/20 split of `data` (split order seeded by the config).
/// Fully deterministic for a fixed config and dataset.
pub fn train_toy(cfg: &TrainConfig, data: &[SynthSample]) -> Result<TrainOutcome, TrainError> {
    if data.len() < 5 {
        return Err(TrainError::TooFewSamples { need: 5, got: data.len() });
    }

    // optional enhancement, applied identically to train and val images
    let enhance_cfg = EnhanceConfig::default();
    let images: Vec<_> = if cfg.use_enhance {
        data.par_iter().map(|s| enhance_pipeline(&s.image, &enhance_cfg)).collect()
    } else {
        data.iter().map(|s| s.image.clone()).collect()
    };
    let inputs: Vec<Tensor<f32>> = images.iter().map(img_to_tensor).collect();
    let gts: Vec<Vec<GtBox>> = data.iter().map(sample_gts).collect();

    // 80/20 split by seed
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut split_rng);
    let val_len = (data.len() / 5).max(1);
    let (train_idx, val_idx) = order.split_at(data.len() - val_len);
    let train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    val_idx.sort_unstable();
    let val_gts = ground_truths(data, &val_idx);
    let classes: Vec<usize> = (0..NUM_CLASSES).collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = ToyNet::<f32>::init(cfg.use_dpsa, &mut init_rng);
    let mut opt = Sgd::new(&mut net, cfg.momentum as f32, cfg.weight_decay as f32);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    let mut log: Vec<EpochRecord> = Vec::new();
    let mut step = 0usize;
    let mut best_map = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut val_detections = Vec::new();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.epochs as f64).cos());
        let mut epoch_order = train_idx.clone();
        epoch_order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in epoch_order.chunks(cfg.batch.max(1)) {
            let results: Result<Vec<_>, TensorError> = chunk
                .par_iter()
                .map(|&i| sample_loss(&net, &inputs[i], &gts[i], cfg))
                .collect();
            let results = results?;

            // ordered reduction keeps runs bit-identical across thread counts
            let mut iter = results.into_iter();
            let (first_loss, mut grad_acc) = iter.next().expect("non-empty batch");
            let mut batch_loss = first_loss.total;
            for (bd, g) in iter {
                batch_loss += bd.total;
                grad_acc.add_assign(&g);
            }
            let inv = 1.0 / chunk.len() as f32;
            grad_acc.scale(inv);
            batch_loss /= chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            opt.step(net.params_mut(), &grad_acc.tensors(), lr as f32);
            step += 1;
            loss_sum += batch_loss;
            batches += 1;
        }

        val_detections = evaluate(&net, &inputs, &val_idx)?;
        let (map50, map50_95) = mean_ap(&val_detections, &val_gts, &classes);
        log.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / batches.max(1) as f64,
            val_map50: map50,
            val_map50_95: map50_95,
        });

        if let Some(patience) = cfg.patience {
            if map50 > best_map {
                best_map = map50;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }

    let last = log.last().expect("at least one epoch");
    Ok(TrainOutcome {
        final_map50: last.val_map50,
        final_map50_95: last.val_map50_95,
        net,
        log,
        val_indices: val_idx,
        val_detections,
        val_gts,
    })
}

/// One ablation arm result.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub name: &'static str,
    pub use_dpsa: bool,
    pub use_fgiou: bool,
    pub map50: f64,
    pub map50_95: f64,
}

/// Run the four flag combinations from one shared seed.
pub fn ablate(base: &TrainConfig, data: &[SynthSample]) -> Result<Vec<AblationRow>, TrainError> {
    let arms: [(&'static str, bool, bool); 4] = [
        ("baseline", false, false),
        ("+DPSA_SPPF", true, false),
        ("+FGIoU", false, true),
        ("+DPSA_SPPF +FGIoU", true, true),
    ];
    let mut rows = Vec::with_capacity(4);
    for (name, use_dpsa, use_fgiou) in arms {
        let cfg = TrainConfig { use_dpsa, use_fgiou, ..base.clone() };
        let outcome = train_toy(&cfg, data)?;
        rows.push(AblationRow {
            name,
            use_dpsa,
            use_fgiou,
            map50: outcome.final_map50,
            map50_95: outcome.final_map50_95,
        });
    }
    Ok(rows)
}

/// Render the ablation as a markdown table with deltas against the
/// baseline row.
pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    out.push_str("| Configuration | DPSA_SPPF | FGIoU | mAP50 | dmAP50 | mAP50:95 | dmAP50:95 |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    let base = &rows[0];
    for row in rows {
        let flag = |b: bool| if b { "yes" } else { "--" };
        out.push_str(&format!(
            "| {} | {} | {} | {:.4} | {:+.4} | {:.4} | {:+.4} |\n",
            row.name,
            flag(row.use_dpsa),
            flag(row.use_fgiou),
            row.map50,
            row.map50 - base.map50,
            row.map50_95,
            row.map50_95 - base.map50_95,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::synth::synth_dataset;
    use super::*;
    use crate::fgiou::fgiou_total_with_grad;
    use rand::Rng;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch: 4,
            seed: 5,
            use_dpsa: true,
            use_fgiou: true,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let data = synth_dataset(20, 3);
        let cfg = tiny_cfg();
        let a = train_toy(&cfg, &data).unwrap();
        let b = train_toy(&cfg, &data).unwrap();
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.val_map50.to_bits(), y.val_map50.to_bits());
        }
        assert_eq!(a.net, b.net);
    }

    #[test]
    fn zero_lr_freezes_parameters_and_loss() {
        let data = synth_dataset(10, 4);
        let cfg = TrainConfig { lr: 0.0, epochs: 3, batch: 4, seed: 2, ..TrainConfig::default() };
        let out = train_toy(&cfg, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fresh = ToyNet::<f32>::init(cfg.use_dpsa, &mut rng);
        assert_eq!(out.net, fresh, "parameters moved with lr = 0");
        let first = out.log[0].train_loss;
        for rec in &out.log {
            assert!((rec.train_loss - first).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_decay_shrinks_params_exactly_without_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = ToyNet::<f32>::init(false, &mut rng);
        let reference = net.clone();
        let (lr, wd) = (0.01f32, 0.0005f32);
        let mut opt = Sgd::new(&mut net, 0.937, wd);
        let zero_grads: Vec<Tensor<f32>> =
            net.params_mut().iter().map(|p| Tensor::zeros(p.shape())).collect();
        let refs: Vec<&Tensor<f32>> = zero_grads.iter().collect();
        opt.step(net.params_mut(), &refs, lr);
        let factor = 1.0 - lr * wd;
        for (p, q) in net.named_params().iter().zip(reference.named_params().iter()) {
            for (a, b) in p.1.data().iter().zip(q.1.data()) {
                assert!((a - b * factor).abs() <= f32::EPSILON * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn enhance_flag_applies_same_pipeline_to_train_and_val() {
        // the trainer enhances the whole dataset once; spot-check that the
        // tensor fed for a val index equals enhance_pipeline of that image
        let data = synth_dataset(10, 9);
        let enhanced: Vec<_> = data
            .iter()
            .map(|s| enhance_pipeline(&s.image, &EnhanceConfig::default()))
            .collect();
        for (s, e) in data.iter().zip(&enhanced) {
            assert_eq!(
                img_to_tensor(e),
                img_to_tensor(&enhance_pipeline(&s.image, &EnhanceConfig::default()))
            );
            assert_ne!(img_to_tensor(e), img_to_tensor(&s.image));
        }
    }

    #[test]
    fn whole_net_gradient_spot_check() {
        // frozen assignment, f64, single sample, five random parameters
        let data = synth_dataset(1, 21);
        let sample = &data[0];
        let x = img_to_tensor(&sample.image).to_f64();
        let gts = sample_gts(sample);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = ToyNet::<f32>::init(true, &mut rng).to_f64();
        let fp = FocalParams::default();
        let w = LossWeights::default();

        let (head, cache) = forward_detect(&net, &x).unwrap();
        let (preds, aux) = decode_anchor_preds(&head);
        let (_, grads, assign) = fgiou_total_with_grad(&preds, &gts, &fp, &w);
        let dhead = loss_grads_to_head::<f64>(&grads, &preds, &aux, head.shape());
        let net_grads = backward_detect(&net, &x, &cache, &dhead).unwrap();

        let loss_at = |net: &ToyNet<f64>| -> f64 {
            let (head, _) = forward_detect(net, &x).unwrap();
            let (preds, _) = decode_anchor_preds(&head);
            fgiou_with_assignment(&preds, &gts, &assign, &fp, &w).0.total
        };

        // one random live element (non-negligible gradient) per stage, so
        // every gradient path from the head down to the stem is exercised
        let named = net.named_params();
        let grad_tensors = net_grads.tensors();
        let stages = ["head.weight", "sppf.cv2.weight", "down2.weight", "down1.weight", "stem.weight"];
        let mut pick_rng = ChaCha8Rng::seed_from_u64(77);
        let eps = 1e-5;
        for stage in stages {
            let ti = named.iter().position(|(n, _)| n == stage).unwrap();
            let ei = loop {
                let ei = pick_rng.gen_range(0..named[ti].1.len());
                if grad_tensors[ti].data()[ei].abs() >= 1e-6 {
                    break ei;
                }
            };
            let analytic = grad_tensors[ti].data()[ei];

            let mut perturbed = net.clone();
            {
                let mut params = perturbed.params_mut();
                params[ti].data_mut()[ei] += eps;
            }
            let hi = loss_at(&perturbed);
            {
                let mut params = perturbed.params_mut();
                params[ti].data_mut()[ei] -= 2.0 * eps;
            }
            let lo = loss_at(&perturbed);
            let numeric = (hi - lo) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                rel < 1e-3,
                "param {stage} elem {ei}: analytic {analytic:.6e} numeric {numeric:.6e} rel {rel:.2e}"
            );
        }
    }

    #[test]
    fn baseline_loss_drops_to_zero_for_perfect_predictions() {
        let gt = GtBox { bbox: crate::fgiou::BBox::new(4.0, 4.0, 20.0, 20.0), class_id: 1 };
        let hi = 1.0 - 1e-9;
        let pred = AnchorPreds {
            boxes: vec![gt.bbox],
            class_scores: vec![vec![1e-9, hi, 1e-9]],
            objectness: vec![hi],
            centers: vec![(12.0, 12.0)],
        };
        let assign =
            task_aligned_assign(&pred.class_scores, &pred.boxes, &pred.centers, &[gt]);
        let (bd, _) = baseline_with_assignment(&pred, &[gt], &assign, &LossWeights::default());
        assert!(bd.total < 1e-6);
    }
}
