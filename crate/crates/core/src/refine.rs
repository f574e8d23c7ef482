//! Occupant aggregation and the refinement head.
//!
//! A 6×6×6 lattice is laid inside each fitted box. Each lattice point max-pools
//! the features of nearby sampled points after scaling them by their implicit
//! values, so points judged outside the object contribute nothing. The
//! concatenated lattice features feed a small head with a shared two-layer trunk
//! and three two-layer branches: confidence, direction and box correction.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{from_box_frame, normalize_yaw, Dims, OrientedBox3, Point3, EPS_DIM};
use crate::implicit::{ImplicitAssignment, LocalSample};
use crate::nn::{relu_in_place, sigmoid, Dense};

pub const GRID_SIDE: usize = 6;
pub const GRID_POINTS: usize = GRID_SIDE * GRID_SIDE * GRID_SIDE;
pub const DEFAULT_AGGREGATION_RADIUS: f64 = 0.8;
pub const DEFAULT_HEAD_WIDTH: usize = 64;
/// `(dx, dy, dz, dl, dw, dh, dθ)`
pub const BOX_DELTA_LEN: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("descriptor length {actual} does not match head input {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
}

/// Cell centers of a 6×6×6 partition of the box, x-major.
pub fn occupant_grid(b: &OrientedBox3) -> Vec<Point3> {
    let step = |k: usize| (2 * k + 1) as f64 / (2 * GRID_SIDE) as f64 - 0.5;
    let mut out = Vec::with_capacity(GRID_POINTS);
    for i in 0..GRID_SIDE {
        for j in 0..GRID_SIDE {
            for k in 0..GRID_SIDE {
                let local = Point3::new(step(i) * b.dims.l, step(j) * b.dims.w, step(k) * b.dims.h);
                out.push(from_box_frame(local, b));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    /// Scale each point feature by its implicit value.
    Implicit,
    /// Plain features (ablation baseline).
    Unweighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupantFeatures {
    pub grid_points: Vec<Point3>,
    pub grid_features: Vec<Vec<f64>>,
    pub descriptor: Vec<f64>,
}

/// Pools sampled-point features around each lattice point of `b`.
///
/// A lattice point gathers every sampled point within `radius` and takes the
/// elementwise max of `value · feature`. Points with value 0 are skipped and an
/// empty neighborhood gives a zero vector.
pub fn aggregate(b: &OrientedBox3, sample: &LocalSample, assignment: &ImplicitAssignment, radius: f64, weighting: Weighting) -> OccupantFeatures {
    let width = sample.features().next().map_or(0, Vec::len);
    let grid_points = occupant_grid(b);
    let r2 = radius * radius;
    let grid_features: Vec<Vec<f64>> = grid_points
        .iter()
        .map(|g| {
            let mut pooled: Option<Vec<f64>> = None;
            for ((p, f), &v) in sample.points().zip(sample.features()).zip(&assignment.values) {
                let w = match weighting {
                    Weighting::Implicit => v,
                    Weighting::Unweighted => 1.0,
                };
                if w == 0.0 || p.distance_squared(*g) > r2 {
                    continue;
                }
                let acc = pooled.get_or_insert_with(|| vec![f64::NEG_INFINITY; width]);
                for (a, x) in acc.iter_mut().zip(f) {
                    *a = a.max(w * x);
                }
            }
            pooled.unwrap_or_else(|| vec![0.0; width])
        })
        .collect();
    let descriptor = grid_features.iter().flatten().copied().collect();
    OccupantFeatures { grid_points, grid_features, descriptor }
}

/// Layer offsets of the head inside its flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub trunk: [Dense; 2],
    pub confidence: [Dense; 2],
    pub direction: [Dense; 2],
    pub box_delta: [Dense; 2],
}

impl HeadLayout {
    pub fn new(descriptor_len: usize, width: usize) -> Self {
        let t0 = Dense::new(descriptor_len, width, 0);
        let t1 = Dense::new(width, width, t0.end());
        let c0 = Dense::new(width, width, t1.end());
        let c1 = Dense::new(width, 1, c0.end());
        let d0 = Dense::new(width, width, c1.end());
        let d1 = Dense::new(width, 1, d0.end());
        let b0 = Dense::new(width, width, d1.end());
        let b1 = Dense::new(width, BOX_DELTA_LEN, b0.end());
        Self { trunk: [t0, t1], confidence: [c0, c1], direction: [d0, d1], box_delta: [b0, b1] }
    }

    pub fn param_count(&self) -> usize {
        self.box_delta[1].end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub descriptor_len: usize,
    pub width: usize,
    pub params: Vec<f64>,
}

impl HeadParams {
    pub fn layout(&self) -> HeadLayout {
        HeadLayout::new(self.descriptor_len, self.width)
    }

    pub fn zeros(descriptor_len: usize, width: usize) -> Self {
        let n = HeadLayout::new(descriptor_len, width).param_count();
        Self { descriptor_len, width, params: vec![0.0; n] }
    }

    /// He-style Gaussian weights, zero biases.
    pub fn random(descriptor_len: usize, width: usize, seed: u64) -> Self {
        let mut head = Self::zeros(descriptor_len, width);
        let layout = head.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = [layout.trunk, layout.confidence, layout.direction, layout.box_delta];
        for layer in layers.iter().flatten() {
            let normal = Normal::new(0.0, (2.0 / layer.input as f64).sqrt()).expect("positive fan-in");
            let end = layer.offset + layer.input * layer.output;
            for w in &mut head.params[layer.offset..end] {
                *w = normal.sample(&mut rng);
            }
        }
        head
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadOutput {
    pub confidence: f64,
    pub box_delta: [f64; BOX_DELTA_LEN],
    pub direction_prob: f64,
    /// Set when the heading points opposite to the fitted yaw.
    pub direction: bool,
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    pub trunk: [Vec<f64>; 2],
    pub confidence_hidden: Vec<f64>,
    pub direction_hidden: Vec<f64>,
    pub box_hidden: Vec<f64>,
    pub output: HeadOutput,
}

fn branch(params: &[f64], layers: &[Dense; 2], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut hidden = layers[0].forward(params, x);
    relu_in_place(&mut hidden);
    let out = layers[1].forward(params, &hidden);
    (hidden, out)
}

pub fn refine_head_traced(descriptor: &[f64], head: &HeadParams) -> Result<HeadTrace, RefineError> {
    if descriptor.len() != head.descriptor_len {
        return Err(RefineError::ShapeMismatch { expected: head.descriptor_len, actual: descriptor.len() });
    }
    let layout = head.layout();
    let p = &head.params;
    let mut t0 = layout.trunk[0].forward(p, descriptor);
    relu_in_place(&mut t0);
    let mut t1 = layout.trunk[1].forward(p, &t0);
    relu_in_place(&mut t1);
    let (confidence_hidden, c) = branch(p, &layout.confidence, &t1);
    let (direction_hidden, d) = branch(p, &layout.direction, &t1);
    let (box_hidden, b) = branch(p, &layout.box_delta, &t1);
    let direction_prob = sigmoid(d[0]);
    let output = HeadOutput {
        confidence: sigmoid(c[0]),
        box_delta: b.try_into().expect("box branch has 7 outputs"),
        direction_prob,
        direction: direction_prob > 0.5,
    };
    Ok(HeadTrace { trunk: [t0, t1], confidence_hidden, direction_hidden, box_hidden, output })
}

pub fn refine_head(descriptor: &[f64], head: &HeadParams) -> Result<HeadOutput, RefineError> {
    refine_head_traced(descriptor, head).map(|t| t.output)
}

/// Applies a head output to a fitted box: center and size offsets, yaw offset,
/// and a half turn when the direction bit is set.
pub fn apply_refinement(b: &OrientedBox3, delta: &[f64; BOX_DELTA_LEN], direction: bool) -> OrientedBox3 {
    let center = b.center + Point3::new(delta[0], delta[1], delta[2]);
    let dims = Dims::new(
        (b.dims.l + delta[3]).max(EPS_DIM),
        (b.dims.w + delta[4]).max(EPS_DIM),
        (b.dims.h + delta[5]).max(EPS_DIM),
    );
    let flip = if direction { PI } else { 0.0 };
    OrientedBox3 { center, dims, yaw: normalize_yaw(b.yaw + delta[6] + flip) }
}

/// Regression target taking `fit` to `gt`: the direction bit plus the deltas
/// that [`apply_refinement`] maps back onto `gt` (yaw residual in `[-π/2, π/2)`).
pub fn refinement_target(fit: &OrientedBox3, gt: &OrientedBox3) -> ([f64; BOX_DELTA_LEN], bool) {
    let diff = normalize_yaw(gt.yaw - fit.yaw);
    let direction = (FRAC_PI_2..3.0 * FRAC_PI_2).contains(&diff);
    let mut residual = diff - if direction { PI } else { 0.0 };
    if residual >= 3.0 * FRAC_PI_2 {
        residual -= TAU;
    }
    let d = gt.center - fit.center;
    (
        [d.x, d.y, d.z, gt.dims.l - fit.dims.l, gt.dims.w - fit.dims.w, gt.dims.h - fit.dims.h, residual],
        direction,
    )
}
