//! A learned seed shifter with a centerness head, trained on the offset and
//! centerness terms.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{focal_grad, focal_loss, smooth_l1, smooth_l1_grad, FocalParams};
use super::{sgd_step, CurvePoint, LossTerms, LossWeights, TrainError};
use crate::candidates::{centerness, make_seed_grid, CenternessScorer, LocalStatistics, OracleShifter, Shifter, DEFAULT_CELL_SIZE};
use crate::geometry::{OrientedBox3, Point3};
use crate::nn::{relu_backward, relu_in_place, sigmoid, Dense};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scenegen::Scene;

/// Trunk `F → H`, offset `H → 3`, feature offset `H → F`, and a centerness
/// branch `F → H → 1` applied to the shifted feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftHead {
    pub feature_width: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct ShiftLayout {
    trunk: Dense,
    offset: Dense,
    feature_offset: Dense,
    ctr_hidden: Dense,
    ctr_out: Dense,
}

impl ShiftLayout {
    fn new(f: usize, h: usize) -> Self {
        let trunk = Dense::new(f, h, 0);
        let offset = Dense::new(h, 3, trunk.end());
        let feature_offset = Dense::new(h, f, offset.end());
        let ctr_hidden = Dense::new(f, h, feature_offset.end());
        let ctr_out = Dense::new(h, 1, ctr_hidden.end());
        Self { trunk, offset, feature_offset, ctr_hidden, ctr_out }
    }

    fn param_count(&self) -> usize {
        self.ctr_out.end()
    }
}

struct ShiftTrace {
    trunk: Vec<f64>,
    offset: [f64; 3],
    shifted_feature: Vec<f64>,
    ctr_hidden: Vec<f64>,
    centerness: f64,
}

impl ShiftHead {
    pub fn zeros(feature_width: usize, hidden: usize) -> Self {
        let n = ShiftLayout::new(feature_width, hidden).param_count();
        Self { feature_width, hidden, params: vec![0.0; n] }
    }

    /// He-style weights; the feature-offset layer starts at a tenth of that scale.
    pub fn random(feature_width: usize, hidden: usize, seed: u64) -> Self {
        let mut head = Self::zeros(feature_width, hidden);
        let l = head.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (layer, gain) in [(l.trunk, 1.0), (l.offset, 1.0), (l.feature_offset, 0.1), (l.ctr_hidden, 1.0), (l.ctr_out, 1.0)] {
            let normal = Normal::new(0.0, gain * (2.0 / layer.input as f64).sqrt()).expect("positive fan-in");
            for w in &mut head.params[layer.offset..layer.offset + layer.input * layer.output] {
                *w = normal.sample(&mut rng);
            }
        }
        head
    }

    fn layout(&self) -> ShiftLayout {
        ShiftLayout::new(self.feature_width, self.hidden)
    }

    fn trace(&self, feature: &[f64]) -> ShiftTrace {
        let l = self.layout();
        let p = &self.params;
        let mut trunk = l.trunk.forward(p, feature);
        relu_in_place(&mut trunk);
        let o = l.offset.forward(p, &trunk);
        let df = l.feature_offset.forward(p, &trunk);
        let shifted_feature: Vec<f64> = feature.iter().zip(&df).map(|(a, b)| a + b).collect();
        let mut ctr_hidden = l.ctr_hidden.forward(p, &shifted_feature);
        relu_in_place(&mut ctr_hidden);
        let centerness = sigmoid(l.ctr_out.forward(p, &ctr_hidden)[0]);
        ShiftTrace { trunk, offset: [o[0], o[1], o[2]], shifted_feature, ctr_hidden, centerness }
    }

    fn score_feature(&self, shifted_feature: &[f64]) -> f64 {
        let l = self.layout();
        let mut h = l.ctr_hidden.forward(&self.params, shifted_feature);
        relu_in_place(&mut h);
        sigmoid(l.ctr_out.forward(&self.params, &h)[0])
    }
}

impl Shifter for ShiftHead {
    fn shift(&self, _position: Point3, feature: &[f64]) -> (Point3, Vec<f64>) {
        let l = self.layout();
        let mut trunk = l.trunk.forward(&self.params, feature);
        relu_in_place(&mut trunk);
        let o = l.offset.forward(&self.params, &trunk);
        (Point3::new(o[0], o[1], o[2]), l.feature_offset.forward(&self.params, &trunk))
    }
}

impl CenternessScorer for ShiftHead {
    /// `feature` is the already shifted feature.
    fn score(&self, _position: Point3, feature: &[f64]) -> f64 {
        self.score_feature(feature)
    }
}

/// One BEV seed with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelExample {
    pub position: Point3,
    pub feature: Vec<f64>,
    /// Box whose footprint contains the seed.
    pub gt: Option<OrientedBox3>,
    pub offset_target: [f64; 3],
    /// Centerness of the current (detached) shifted position; refreshed by [`pixel_targets`].
    pub centerness_target: f64,
}

impl PixelExample {
    pub fn positive(&self) -> bool {
        self.gt.is_some()
    }
}

/// Seeds of `scene` with offset targets toward their enclosing box centers.
pub fn scene_pixels(scene: &Scene, cell_size: f64) -> Result<Vec<PixelExample>, TrainError> {
    let grid = make_seed_grid(&scene.cloud, cell_size, &LocalStatistics::default())
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    let boxes = scene.gt_boxes();
    let oracle = OracleShifter { boxes: &boxes };
    Ok(grid
        .positions
        .iter()
        .zip(grid.features)
        .map(|(&position, feature)| {
            let gt = oracle.enclosing(position).copied();
            let offset_target = gt.map_or([0.0; 3], |b| (b.center - position).to_array());
            PixelExample { position, feature, gt, offset_target, centerness_target: 0.0 }
        })
        .collect())
}

/// Recomputes centerness targets at the head's current shifted positions.
pub fn pixel_targets(head: &ShiftHead, pixels: &mut [PixelExample]) {
    pixels.par_iter_mut().for_each(|px| {
        px.centerness_target = match &px.gt {
            Some(b) => {
                let (o, _) = head.shift(px.position, &px.feature);
                centerness(px.position + o, b)
            }
            None => 0.0,
        };
    });
}

/// Offset and centerness terms over `pixels` (both normalized by the positive
/// count) and the gradient of `λ_ofs·L_ofs + λ_ctr·L_ctr`.
pub fn shift_loss_and_grad(head: &ShiftHead, pixels: &[PixelExample], weights: &LossWeights) -> (LossTerms, f64, Vec<f64>) {
    let positives = pixels.iter().filter(|p| p.positive()).count();
    let norm = if positives == 0 { 0.0 } else { 1.0 / positives as f64 };
    let fp = FocalParams::default();
    let l = head.layout();
    let parts: Vec<(f64, f64, Vec<f64>)> = pixels
        .par_iter()
        .map(|px| {
            let mut grad = vec![0.0; head.params.len()];
            let t = head.trace(&px.feature);
            let ctr_loss = focal_loss(t.centerness, px.centerness_target, fp);
            let d_logit = weights.centerness * norm * focal_grad(t.centerness, px.centerness_target, fp) * t.centerness * (1.0 - t.centerness);
            let mut dh = l.ctr_out.backward(&head.params, &t.ctr_hidden, &[d_logit], &mut grad);
            relu_backward(&t.ctr_hidden, &mut dh);
            let d_shifted = l.ctr_hidden.backward(&head.params, &t.shifted_feature, &dh, &mut grad);
            let mut d_trunk = l.feature_offset.backward(&head.params, &t.trunk, &d_shifted, &mut grad);
            let mut ofs_loss = 0.0;
            if px.positive() {
                let mut d_ofs = [0.0; 3];
                for k in 0..3 {
                    ofs_loss += smooth_l1(t.offset[k], px.offset_target[k]);
                    d_ofs[k] = weights.offset * norm * smooth_l1_grad(t.offset[k], px.offset_target[k]);
                }
                let d = l.offset.backward(&head.params, &t.trunk, &d_ofs, &mut grad);
                d_trunk.iter_mut().zip(d).for_each(|(a, b)| *a += b);
            }
            relu_backward(&t.trunk, &mut d_trunk);
            l.trunk.backward(&head.params, &px.feature, &d_trunk, &mut grad);
            (ofs_loss, ctr_loss, grad)
        })
        .collect();
    let mut grad = vec![0.0; head.params.len()];
    let (mut ofs, mut ctr) = (0.0, 0.0);
    for (o, c, g) in &parts {
        ofs += o;
        ctr += c;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let terms = LossTerms { offset: ofs * norm, centerness: ctr * norm, ..Default::default() };
    let total = weights.offset * terms.offset + weights.centerness * terms.centerness;
    (terms, total, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub cell_size: f64,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for ShiftTrainConfig {
    fn default() -> Self {
        Self { epochs: 10, lr: 0.01, batch_size: 64, hidden: 32, cell_size: DEFAULT_CELL_SIZE, seed: 0, weights: LossWeights::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedShiftHead {
    pub head: ShiftHead,
    pub curve: Vec<CurvePoint>,
}

/// Minibatch SGD over all seeds of `scenes`. Centerness targets are refreshed
/// from the current predictions at the start of each epoch.
pub fn train_shift_head(scenes: &[Scene], cfg: &ShiftTrainConfig) -> Result<TrainedShiftHead, TrainError> {
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(TrainError::InvalidConfig("shift training needs lr > 0, batch_size >= 1, hidden >= 1".into()));
    }
    cfg.weights.validate()?;
    let mut pixels = Vec::new();
    for scene in scenes {
        pixels.extend(scene_pixels(scene, cfg.cell_size)?);
    }
    if pixels.is_empty() {
        return Err(TrainError::NoExamples);
    }
    let width = pixels[0].feature.len();
    let mut head = ShiftHead::random(width, cfg.hidden, derive_seed(cfg.seed, u64::MAX));
    let record = |epoch: usize, head: &ShiftHead, pixels: &[PixelExample]| {
        let (terms, total, _) = shift_loss_and_grad(head, pixels, &cfg.weights);
        CurvePoint { epoch, terms, total }
    };
    pixel_targets(&head, &mut pixels);
    let mut curve = vec![record(0, &head, &pixels)];
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 2));
    let mut order: Vec<usize> = (0..pixels.len()).collect();
    for epoch in 1..=cfg.epochs {
        pixel_targets(&head, &mut pixels);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<PixelExample> = chunk.iter().map(|&i| pixels[i].clone()).collect();
            let (_, total, grad) = shift_loss_and_grad(&head, &batch, &cfg.weights);
            if !total.is_finite() {
                return Err(TrainError::DivergenceDetected { epoch });
            }
            sgd_step(&mut head.params, &grad, cfg.lr);
        }
        let point = record(epoch, &head, &pixels);
        if !point.total.is_finite() {
            return Err(TrainError::DivergenceDetected { epoch });
        }
        curve.push(point);
    }
    Ok(TrainedShiftHead { head, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Dims;
    use crate::train::grad_check;
    use rand::Rng;

    fn pixels(width: usize) -> Vec<PixelExample> {
        let mut rng = rng_from_seed(5);
        let b = OrientedBox3::new(Point3::new(10.0, 2.0, -0.9), Dims::new(3.9, 1.6, 1.56), 0.4).unwrap();
        (0..10)
            .map(|i| {
                let feature = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
                let position = Point3::new(10.0 + rng.random_range(-1.5..1.5), 2.0 + rng.random_range(-0.5..0.5), 0.0);
                let gt = (i % 3 != 0).then_some(b);
                let offset_target = gt.map_or([0.0; 3], |b| (b.center - position).to_array());
                PixelExample { position, feature, gt, offset_target, centerness_target: rng.random_range(0.0..1.0) }
            })
            .collect()
    }

    #[test]
    fn gradient_matches_differences() {
        let width = 5;
        let px = pixels(width);
        let head = ShiftHead::random(width, 6, 9);
        let w = LossWeights::default();
        let f = |p: &[f64]| {
            let h = ShiftHead { params: p.to_vec(), ..head.clone() };
            let (_, total, grad) = shift_loss_and_grad(&h, &px, &w);
            (total, grad)
        };
        let r = grad_check(f, &head.params, 1e-6).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_head_keeps_seeds() {
        let head = ShiftHead::zeros(4, 3);
        let (o, df) = head.shift(Point3::new(1.0, 2.0, 0.0), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(o, Point3::ORIGIN);
        assert_eq!(df, vec![0.0; 4]);
        assert_eq!(head.score(Point3::ORIGIN, &[0.0; 4]), 0.5);
    }
}
