//! Detection metrics, the masking-versus-shifting robustness experiment, the
//! angle-count sweep, and CSV/SVG reporting.

mod ablation;
pub mod report;
mod robustness;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_3d, iou_bev, OrientedBox3};

pub use ablation::{run_ablation_h, AblationConfig, AblationRow};
pub use robustness::{
    fit_masked_box, robustness_implicit, robustness_parametric, IouSummary, RobustnessConfig, RobustnessSeries, DEFAULT_MASK_FRACTIONS, DEFAULT_SHIFTS,
};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.3;
pub const DEFAULT_NMS_IOU: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scene {scene}: {reason}")]
    Scene { scene: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: OrientedBox3,
    pub confidence: f64,
    pub label: String,
}

impl Detection {
    /// A "Car" detection; confidence is clamped to `[0, 1]`.
    pub fn new(bbox: OrientedBox3, confidence: f64) -> Self {
        Self { bbox, confidence: confidence.clamp(0.0, 1.0), label: "Car".to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IouKind {
    Bev,
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &OrientedBox3, b: &OrientedBox3) -> f64 {
        match self {
            IouKind::Bev => iou_bev(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}

fn check_unit(t: f64) -> Result<(), EvalError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(EvalError::InvalidThreshold(t))
    }
}

/// Indices sorted by descending confidence; ties keep input order.
fn by_confidence(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.partial_cmp(&dets[a].confidence).unwrap_or(Ordering::Equal));
    order
}

/// Drops detections below `conf_t`, then greedily keeps the most confident and
/// removes any remaining detection overlapping a kept one by more than `iou_t`.
pub fn detection_nms(dets: &[Detection], conf_t: f64, iou_t: f64, kind: IouKind) -> Result<Vec<Detection>, EvalError> {
    check_unit(conf_t)?;
    check_unit(iou_t)?;
    let mut kept: Vec<Detection> = Vec::new();
    for i in by_confidence(dets) {
        let d = &dets[i];
        if d.confidence < conf_t {
            continue;
        }
        if kept.iter().all(|k| kind.iou(&k.bbox, &d.bbox) <= iou_t) {
            kept.push(d.clone());
        }
    }
    Ok(kept)
}

/// Per detection in confidence order: the index of the ground truth it matches,
/// taking the highest-IoU unmatched box at or above `iou_t`.
fn greedy_match(dets: &[Detection], order: &[usize], gt: &[OrientedBox3], iou_t: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; gt.len()];
    order
        .iter()
        .map(|&i| {
            let best = gt
                .iter()
                .enumerate()
                .filter(|(g, _)| !used[*g])
                .map(|(g, b)| (g, iou_3d(&dets[i].bbox, b)))
                .filter(|(_, v)| *v >= iou_t)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            best.map(|(g, _)| {
                used[g] = true;
                g
            })
        })
        .collect()
}

/// Fraction of `gt` matched by the `top_k` most confident proposals at 3D IoU ≥ `iou_t`.
/// With no ground truth there is nothing to miss and the result is 1.
pub fn recall_at(proposals: &[Detection], gt: &[OrientedBox3], iou_t: f64, top_k: usize) -> Result<f64, EvalError> {
    if !(iou_t > 0.0 && iou_t <= 1.0) {
        return Err(EvalError::InvalidThreshold(iou_t));
    }
    if gt.is_empty() {
        return Ok(1.0);
    }
    let mut order = by_confidence(proposals);
    order.truncate(top_k);
    let matched = greedy_match(proposals, &order, gt, iou_t).iter().flatten().count();
    Ok(matched as f64 / gt.len() as f64)
}

/// Recall pooled over scenes: matched boxes over all ground-truth boxes, each
/// scene contributing its own `top_k` proposals.
pub fn recall_multi(scenes: &[(Vec<Detection>, Vec<OrientedBox3>)], iou_t: f64, top_k: usize) -> Result<f64, EvalError> {
    if !(iou_t > 0.0 && iou_t <= 1.0) {
        return Err(EvalError::InvalidThreshold(iou_t));
    }
    let total: usize = scenes.iter().map(|(_, g)| g.len()).sum();
    if total == 0 {
        return Ok(1.0);
    }
    let matched: usize = scenes
        .iter()
        .map(|(d, g)| {
            let mut order = by_confidence(d);
            order.truncate(top_k);
            greedy_match(d, &order, g, iou_t).iter().flatten().count()
        })
        .sum();
    Ok(matched as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApMode {
    R11,
    R40,
}

impl ApMode {
    pub fn recall_positions(self) -> Vec<f64> {
        match self {
            ApMode::R11 => (0..=10).map(|i| i as f64 / 10.0).collect(),
            ApMode::R40 => (1..=40).map(|i| i as f64 / 40.0).collect(),
        }
    }
}

impl std::str::FromStr for ApMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "R11" => Ok(ApMode::R11),
            "R40" => Ok(ApMode::R40),
            other => Err(format!("unknown AP mode '{other}' (expected R11 or R40)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub mode: ApMode,
    /// `(recall, precision)` after each detection in confidence order.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

/// Interpolated AP pooled over several scenes, each given as `(detections, ground truth)`.
///
/// Detections are matched per scene, then ranked together. Precision at a
/// recall position is the best precision at any recall at or above it, with
/// precision 1 at recall 0. No detections, or no true positives, give AP 0.
pub fn average_precision_multi(scenes: &[(Vec<Detection>, Vec<OrientedBox3>)], iou_t: f64, mode: ApMode) -> Result<PrCurve, EvalError> {
    check_unit(iou_t)?;
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    let mut total_gt = 0;
    for (dets, gt) in scenes {
        total_gt += gt.len();
        let order = by_confidence(dets);
        let matches = greedy_match(dets, &order, gt, iou_t);
        ranked.extend(order.iter().zip(matches).map(|(&i, m)| (dets[i].confidence, m.is_some())));
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(ranked.len());
    for (_, hit) in &ranked {
        if *hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let recall = if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 };
        points.push((recall, tp as f64 / (tp + fp) as f64));
    }
    if tp == 0 {
        return Ok(PrCurve { mode, points, ap: 0.0 });
    }
    let mut envelope = vec![(0.0, 1.0)];
    envelope.extend(points.iter().copied());
    let positions = mode.recall_positions();
    let sum: f64 = positions
        .iter()
        .map(|&r| envelope.iter().filter(|(rec, _)| *rec >= r - 1e-12).map(|(_, p)| *p).fold(0.0, f64::max))
        .sum();
    Ok(PrCurve { mode, points, ap: sum / positions.len() as f64 })
}

pub fn average_precision(dets: &[Detection], gt: &[OrientedBox3], iou_t: f64, mode: ApMode) -> Result<PrCurve, EvalError> {
    average_precision_multi(&[(dets.to_vec(), gt.to_vec())], iou_t, mode)
}

/// Bird's-eye-view range bands `[0, 30)`, `[30, 50)` and `[50, ∞)` meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistanceBand {
    Near,
    Mid,
    Far,
}

impl DistanceBand {
    pub const ALL: [DistanceBand; 3] = [DistanceBand::Near, DistanceBand::Mid, DistanceBand::Far];

    pub fn of(b: &OrientedBox3) -> Self {
        let r = b.center.x.hypot(b.center.y);
        if r < 30.0 {
            DistanceBand::Near
        } else if r < 50.0 {
            DistanceBand::Mid
        } else {
            DistanceBand::Far
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DistanceBand::Near => "0-30m",
            DistanceBand::Mid => "30-50m",
            DistanceBand::Far => "50m-inf",
        }
    }
}

/// AP restricted to one distance band (detections and ground truth filtered by their own centers).
pub fn average_precision_in_band(
    scenes: &[(Vec<Detection>, Vec<OrientedBox3>)],
    band: DistanceBand,
    iou_t: f64,
    mode: ApMode,
) -> Result<PrCurve, EvalError> {
    let filtered: Vec<(Vec<Detection>, Vec<OrientedBox3>)> = scenes
        .iter()
        .map(|(d, g)| {
            (
                d.iter().filter(|x| DistanceBand::of(&x.bbox) == band).cloned().collect(),
                g.iter().filter(|x| DistanceBand::of(x) == band).copied().collect(),
            )
        })
        .collect();
    average_precision_multi(&filtered, iou_t, mode)
}
