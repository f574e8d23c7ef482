//! Losses, hand-written gradients and plain SGD training loops.
//!
//! The six-term objective combines candidate shifting, centerness, implicit
//! classification, confidence, box refinement and direction terms. Each
//! trainable component (kernel generator, shift head, refinement head) stores
//! its parameters as a flat vector and exposes `loss_and_grad`, so the same
//! [`grad_check`] and SGD step apply to all of them.

mod classifier;
mod gradcheck;
mod head;
pub mod loss;
mod shift;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classifier::{
    evaluate_implicit, implicit_batch_loss_and_grad, implicit_examples, implicit_loss_and_grad, train_implicit_classifier,
    train_implicit_on_examples, example_values,
    ImplicitEval, ImplicitExample, ImplicitTrainConfig, TrainedClassifier,
};
pub use gradcheck::{grad_check, grad_check_indices, GradCheckReport};
pub use head::{head_examples, POSITIVE_IOU, head_loss_and_grad, train_refine_head, HeadExample, HeadTrainConfig, TrainedHead};
pub use shift::{
    pixel_targets, scene_pixels, shift_loss_and_grad, train_shift_head, PixelExample, ShiftHead, ShiftTrainConfig, TrainedShiftHead,
};

use loss::{bce, focal_loss, smooth_l1_sum, FocalParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range for {len} entries in {set}")]
    IndexOutOfRange { set: &'static str, index: usize, len: usize },
    #[error("no training examples")]
    NoExamples,
}

/// Coefficients of the six loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub offset: f64,
    pub centerness: f64,
    pub implicit: f64,
    pub classification: f64,
    pub box_refine: f64,
    pub direction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { offset: 1.0, centerness: 1.0, implicit: 2.0, classification: 1.0, box_refine: 2.0, direction: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        let all = [self.offset, self.centerness, self.implicit, self.classification, self.box_refine, self.direction];
        if all.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig("loss weights must be finite and nonnegative".into()))
        }
    }
}

/// Targets for one batch. Pixel arrays are indexed by seed, center arrays by candidate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainBatch {
    /// Seeds lying inside a ground-truth footprint.
    pub positive_pixels: Vec<usize>,
    /// Candidates lying inside a ground-truth box.
    pub positive_centers: Vec<usize>,
    pub offset_targets: Vec<[f64; 3]>,
    pub centerness_targets: Vec<f64>,
    pub implicit_targets: Vec<Vec<f64>>,
    pub class_targets: Vec<f64>,
    pub box_targets: Vec<[f64; 7]>,
    pub direction_targets: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub offsets: Vec<[f64; 3]>,
    pub centerness: Vec<f64>,
    pub implicit: Vec<Vec<f64>>,
    pub confidence: Vec<f64>,
    pub box_delta: Vec<[f64; 7]>,
    pub direction: Vec<f64>,
}

/// Unweighted per-term values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub offset: f64,
    pub centerness: f64,
    pub implicit: f64,
    pub classification: f64,
    pub box_refine: f64,
    pub direction: f64,
}

impl LossTerms {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.offset * self.offset
            + w.centerness * self.centerness
            + w.implicit * self.implicit
            + w.classification * self.classification
            + w.box_refine * self.box_refine
            + w.direction * self.direction
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub terms: LossTerms,
    pub total: f64,
}

/// One row of a loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    #[serde(flatten)]
    pub terms: LossTerms,
    pub total: f64,
}

/// Mean BCE over one candidate's points.
pub fn mean_bce(pred: &[f64], target: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target).map(|(p, t)| bce(*p, *t)).sum::<f64>() / pred.len() as f64
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), TrainError> {
    if got == want {
        Ok(())
    } else {
        Err(TrainError::ShapeMismatch(format!("{what}: expected {want}, got {got}")))
    }
}

fn check_indices(set: &'static str, idx: &[usize], len: usize) -> Result<(), TrainError> {
    match idx.iter().find(|&&i| i >= len) {
        Some(&index) => Err(TrainError::IndexOutOfRange { set, index, len }),
        None => Ok(()),
    }
}

fn normalizer(count: usize, term: &str) -> f64 {
    if count == 0 {
        log::warn!("no positives for the {term} term; contributing 0");
        0.0
    } else {
        1.0 / count as f64
    }
}

/// Weighted six-term objective.
///
/// * offset: smooth-L1 summed over positive pixels, divided by `|positive pixels|`;
/// * centerness: focal summed over all pixels, divided by `|positive pixels|`;
/// * implicit: per-candidate mean BCE summed over positive centers, divided by `|positive centers|`;
/// * classification: focal on confidence, averaged over all centers;
/// * box and direction: smooth-L1 and BCE over positive centers, divided by `|positive centers|`.
///
/// A term whose positive set is empty contributes 0.
pub fn total_loss(batch: &TrainBatch, pred: &Predictions, weights: &LossWeights) -> Result<LossBreakdown, TrainError> {
    weights.validate()?;
    let n_pix = batch.offset_targets.len();
    check_len("centerness targets", batch.centerness_targets.len(), n_pix)?;
    check_len("offset predictions", pred.offsets.len(), n_pix)?;
    check_len("centerness predictions", pred.centerness.len(), n_pix)?;
    let n_ctr = batch.implicit_targets.len();
    for (what, got) in [
        ("class targets", batch.class_targets.len()),
        ("box targets", batch.box_targets.len()),
        ("direction targets", batch.direction_targets.len()),
        ("implicit predictions", pred.implicit.len()),
        ("confidence predictions", pred.confidence.len()),
        ("box predictions", pred.box_delta.len()),
        ("direction predictions", pred.direction.len()),
    ] {
        check_len(what, got, n_ctr)?;
    }
    for (p, t) in pred.implicit.iter().zip(&batch.implicit_targets) {
        check_len("implicit values per center", p.len(), t.len())?;
    }
    check_indices("positive_pixels", &batch.positive_pixels, n_pix)?;
    check_indices("positive_centers", &batch.positive_centers, n_ctr)?;

    let fp = FocalParams::default();
    let pix_norm = normalizer(batch.positive_pixels.len(), "offset/centerness");
    let ctr_norm = normalizer(batch.positive_centers.len(), "implicit/box/direction");

    let offset = pix_norm
        * batch.positive_pixels.iter().map(|&i| smooth_l1_sum(&pred.offsets[i], &batch.offset_targets[i])).sum::<f64>();
    let centerness = pix_norm
        * pred.centerness.iter().zip(&batch.centerness_targets).map(|(p, t)| focal_loss(*p, *t, fp)).sum::<f64>();
    let implicit = ctr_norm
        * batch.positive_centers.iter().map(|&i| mean_bce(&pred.implicit[i], &batch.implicit_targets[i])).sum::<f64>();
    let classification = if n_ctr == 0 {
        0.0
    } else {
        pred.confidence.iter().zip(&batch.class_targets).map(|(p, t)| focal_loss(*p, *t, fp)).sum::<f64>() / n_ctr as f64
    };
    let box_refine = ctr_norm
        * batch.positive_centers.iter().map(|&i| smooth_l1_sum(&pred.box_delta[i], &batch.box_targets[i])).sum::<f64>();
    let direction =
        ctr_norm * batch.positive_centers.iter().map(|&i| bce(pred.direction[i], batch.direction_targets[i])).sum::<f64>();

    let terms = LossTerms { offset, centerness, implicit, classification, box_refine, direction };
    Ok(LossBreakdown { terms, total: terms.weighted_total(weights) })
}

/// Writes `epoch,offset,centerness,implicit,classification,box_refine,direction,total`.
pub fn write_curve_csv<W: std::io::Write>(curve: &[CurvePoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "offset", "centerness", "implicit", "classification", "box_refine", "direction", "total"])?;
    for p in curve {
        let t = &p.terms;
        let row = [t.offset, t.centerness, t.implicit, t.classification, t.box_refine, t.direction, p.total];
        let mut record = vec![p.epoch.to_string()];
        record.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct CurveRow {
    epoch: usize,
    offset: f64,
    centerness: f64,
    implicit: f64,
    classification: f64,
    box_refine: f64,
    direction: f64,
    total: f64,
}

pub fn read_curve_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<CurvePoint>> {
    csv::Reader::from_reader(input)
        .deserialize::<CurveRow>()
        .map(|r| {
            r.map(|r| CurvePoint {
                epoch: r.epoch,
                terms: LossTerms {
                    offset: r.offset,
                    centerness: r.centerness,
                    implicit: r.implicit,
                    classification: r.classification,
                    box_refine: r.box_refine,
                    direction: r.direction,
                },
                total: r.total,
            })
        })
        .collect()
}

/// One SGD step: `params -= lr · grad`.
pub(crate) fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}
