//! Confidence, box and direction terms for the refinement head.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{bce, bce_grad, focal_grad, focal_loss, smooth_l1_grad, smooth_l1_sum, FocalParams};
use super::{sgd_step, CurvePoint, LossTerms, LossWeights, TrainError};
use crate::boundary::{generate_boundary, BoundaryConfig};
use crate::candidates::{cube_nms, make_seed_grid, shift_candidates, Candidate, LocalStatistics, OracleScorer, OracleShifter, DEFAULT_CELL_SIZE, DEFAULT_TOP_K};
use crate::geometry::{iou_3d, point_in_box, Point3};
use crate::implicit::{build_local_sample, ImplicitAssignment, SamplingConfig, DEFAULT_THRESHOLD};
use crate::nn::{relu_backward, Dense};
use crate::refine::{aggregate, refine_head_traced, refinement_target, HeadParams, Weighting, BOX_DELTA_LEN, DEFAULT_AGGREGATION_RADIUS, DEFAULT_HEAD_WIDTH};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scenegen::Scene;

/// Fits with IoU at or above this count as positives for the box and direction terms.
pub const POSITIVE_IOU: f64 = 0.55;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadExample {
    pub descriptor: Vec<f64>,
    /// Best IoU of the fitted box with any ground-truth box.
    pub class_target: f64,
    pub box_target: [f64; BOX_DELTA_LEN],
    pub direction_target: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub width: usize,
    pub seed: u64,
    pub cell_size: f64,
    /// Extra candidates per object, displaced up to `jitter` meters in x and y.
    pub jitter_per_object: usize,
    pub jitter: f64,
    pub radius: f64,
    pub sampling: SamplingConfig,
    pub boundary: BoundaryConfig,
    pub weights: LossWeights,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.01,
            batch_size: 16,
            width: DEFAULT_HEAD_WIDTH,
            seed: 0,
            cell_size: DEFAULT_CELL_SIZE,
            jitter_per_object: 2,
            jitter: 2.0,
            radius: DEFAULT_AGGREGATION_RADIUS,
            sampling: SamplingConfig::default(),
            boundary: BoundaryConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedHead {
    pub head: HeadParams,
    pub curve: Vec<CurvePoint>,
}

/// Fitted boxes from oracle-labeled samples around exact and jittered centers,
/// with occupant descriptors and refinement targets.
pub fn head_examples(scene: &Scene, cfg: &HeadTrainConfig, seed: u64) -> Result<Vec<HeadExample>, TrainError> {
    let grid = make_seed_grid(&scene.cloud, cfg.cell_size, &LocalStatistics::default())
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    let point_features = grid.point_features(scene.cloud.len());
    let boxes = scene.gt_boxes();
    let shifted = shift_candidates(&grid, &OracleShifter { boxes: &boxes }, &OracleScorer { boxes: &boxes });
    let mut rng = rng_from_seed(seed);
    let mut cands: Vec<Candidate> = Vec::new();
    for c in cube_nms(&shifted, DEFAULT_TOP_K) {
        for _ in 0..cfg.jitter_per_object {
            let d = Point3::new(rng.random_range(-cfg.jitter..=cfg.jitter), rng.random_range(-cfg.jitter..=cfg.jitter), 0.0);
            cands.push(Candidate { position: c.position + d, ..c.clone() });
        }
        cands.push(c);
    }
    let examples = cands
        .par_iter()
        .enumerate()
        .filter_map(|(i, cand)| {
            let sample = build_local_sample(&scene.cloud, &point_features, cand, &cfg.sampling, derive_seed(seed, i as u64));
            let values = sample.points().map(|p| if boxes.iter().any(|b| point_in_box(*p, b)) { 1.0 } else { 0.0 }).collect();
            let assignment = ImplicitAssignment::from_values(values, DEFAULT_THRESHOLD, sample.raw_points.len());
            let fit = generate_boundary(&sample, &assignment, &cfg.boundary).ok()?;
            let (gt, iou) = boxes
                .iter()
                .map(|b| (b, iou_3d(&fit.bbox, b)))
                .max_by(|a, b| a.1.total_cmp(&b.1))?;
            let features = aggregate(&fit.bbox, &sample, &assignment, cfg.radius, Weighting::Implicit);
            let (box_target, flip) = refinement_target(&fit.bbox, gt);
            Some(HeadExample {
                descriptor: features.descriptor,
                class_target: iou,
                box_target,
                direction_target: if flip { 1.0 } else { 0.0 },
                positive: iou >= POSITIVE_IOU,
            })
        })
        .collect();
    Ok(examples)
}

fn branch_backward(params: &[f64], layers: &[Dense; 2], input: &[f64], hidden: &[f64], d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let mut dh = layers[1].backward(params, hidden, d_out, grad);
    relu_backward(hidden, &mut dh);
    layers[0].backward(params, input, &dh, grad)
}

/// Confidence focal averaged over all examples; box smooth-L1 and direction BCE
/// over positives divided by the positive count. Returns the gradient of
/// `λ_cls·L_cls + λ_box·L_box + λ_dir·L_dir`.
pub fn head_loss_and_grad(head: &HeadParams, examples: &[HeadExample], weights: &LossWeights) -> Result<(LossTerms, f64, Vec<f64>), TrainError> {
    let n = examples.len();
    let positives = examples.iter().filter(|e| e.positive).count();
    let all_norm = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let pos_norm = if positives == 0 { 0.0 } else { 1.0 / positives as f64 };
    let fp = FocalParams::default();
    let layout = head.layout();
    let p = &head.params;
    let parts: Vec<Result<(LossTerms, Vec<f64>), TrainError>> = examples
        .par_iter()
        .map(|ex| {
            let t = refine_head_traced(&ex.descriptor, head).map_err(|e| TrainError::ShapeMismatch(e.to_string()))?;
            let o = t.output;
            let mut grad = vec![0.0; p.len()];
            let mut terms = LossTerms { classification: focal_loss(o.confidence, ex.class_target, fp), ..Default::default() };
            let dc = weights.classification * all_norm * focal_grad(o.confidence, ex.class_target, fp) * o.confidence * (1.0 - o.confidence);
            let mut d_t1 = branch_backward(p, &layout.confidence, &t.trunk[1], &t.confidence_hidden, &[dc], &mut grad);
            if ex.positive {
                terms.box_refine = smooth_l1_sum(&o.box_delta, &ex.box_target);
                terms.direction = bce(o.direction_prob, ex.direction_target);
                let d_box: Vec<f64> = o
                    .box_delta
                    .iter()
                    .zip(&ex.box_target)
                    .map(|(a, b)| weights.box_refine * pos_norm * smooth_l1_grad(*a, *b))
                    .collect();
                let q = o.direction_prob;
                let dd = weights.direction * pos_norm * bce_grad(q, ex.direction_target) * q * (1.0 - q);
                let db = branch_backward(p, &layout.box_delta, &t.trunk[1], &t.box_hidden, &d_box, &mut grad);
                let ddir = branch_backward(p, &layout.direction, &t.trunk[1], &t.direction_hidden, &[dd], &mut grad);
                for ((a, b), c) in d_t1.iter_mut().zip(db).zip(ddir) {
                    *a += b + c;
                }
            }
            relu_backward(&t.trunk[1], &mut d_t1);
            let mut d_t0 = layout.trunk[1].backward(p, &t.trunk[0], &d_t1, &mut grad);
            relu_backward(&t.trunk[0], &mut d_t0);
            layout.trunk[0].backward(p, &ex.descriptor, &d_t0, &mut grad);
            Ok((terms, grad))
        })
        .collect();
    let mut grad = vec![0.0; p.len()];
    let mut sum = LossTerms::default();
    for part in parts {
        let (t, g) = part?;
        sum.classification += t.classification;
        sum.box_refine += t.box_refine;
        sum.direction += t.direction;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let terms = LossTerms {
        classification: sum.classification * all_norm,
        box_refine: sum.box_refine * pos_norm,
        direction: sum.direction * pos_norm,
        ..Default::default()
    };
    let total = weights.classification * terms.classification + weights.box_refine * terms.box_refine + weights.direction * terms.direction;
    Ok((terms, total, grad))
}

pub fn train_refine_head(scenes: &[Scene], cfg: &HeadTrainConfig) -> Result<TrainedHead, TrainError> {
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 || cfg.width == 0 {
        return Err(TrainError::InvalidConfig("head training needs lr > 0, batch_size >= 1, width >= 1".into()));
    }
    cfg.weights.validate()?;
    let mut examples = Vec::new();
    for (s, scene) in scenes.iter().enumerate() {
        examples.extend(head_examples(scene, cfg, derive_seed(cfg.seed, s as u64))?);
    }
    if examples.is_empty() {
        return Err(TrainError::NoExamples);
    }
    let mut head = HeadParams::random(examples[0].descriptor.len(), cfg.width, derive_seed(cfg.seed, u64::MAX));
    let record = |epoch: usize, head: &HeadParams| -> Result<CurvePoint, TrainError> {
        let (terms, total, _) = head_loss_and_grad(head, &examples, &cfg.weights)?;
        Ok(CurvePoint { epoch, terms, total })
    };
    let mut curve = vec![record(0, &head)?];
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 3));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<HeadExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (_, total, grad) = head_loss_and_grad(&head, &batch, &cfg.weights)?;
            if !total.is_finite() {
                return Err(TrainError::DivergenceDetected { epoch });
            }
            sgd_step(&mut head.params, &grad, cfg.lr);
        }
        let point = record(epoch, &head)?;
        if !point.total.is_finite() {
            return Err(TrainError::DivergenceDetected { epoch });
        }
        curve.push(point);
    }
    Ok(TrainedHead { head, curve })
}
