//! Local sampling around a candidate and candidate-conditioned implicit values.
//!
//! Around each candidate we gather raw points with a ball query and a subsample
//! of a virtual lattice. A generator maps the candidate's `[feature; position]`
//! to the weights of a two-layer pointwise network; that network then assigns
//! every sampled point a value in `(0, 1)`, read as the probability of lying
//! inside the candidate's object.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::Candidate;
use crate::geometry::{point_in_box, OrientedBox3, Point3, PointCloud};
use crate::nn::{relu_in_place, sigmoid, Dense};

pub const KERNEL_CHANNELS: usize = 16;
pub const DEFAULT_RADIUS: f64 = 3.2;
pub const DEFAULT_SAMPLE_COUNT: usize = 256;
pub const DEFAULT_GRID_SIZE: usize = 10;
pub const DEFAULT_GRID_INTERVAL: [f64; 3] = [0.6, 0.6, 0.3];
pub const DEFAULT_KNN: usize = 3;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Candidate positions are multiplied by this before entering the kernel generator.
pub const POSITION_SCALE: f64 = 0.02;
/// Bound on generated kernel weights: `θ = THETA_SCALE · tanh(·)`.
pub const THETA_SCALE: f64 = 4.0;

/// Generator nonlinearity.
pub fn theta_activation(pre: f64) -> f64 {
    THETA_SCALE * pre.tanh()
}

/// Derivative of [`theta_activation`] expressed through its output.
pub fn theta_activation_grad(theta: f64) -> f64 {
    let t = theta / THETA_SCALE;
    THETA_SCALE * (1.0 - t * t)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImplicitError {
    #[error("feature width mismatch: kernels expect {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("non-finite generator parameters")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub radius: f64,
    pub max_points: usize,
    pub grid_size: usize,
    pub interval: [f64; 3],
    pub knn_k: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            max_points: DEFAULT_SAMPLE_COUNT,
            grid_size: DEFAULT_GRID_SIZE,
            interval: DEFAULT_GRID_INTERVAL,
            knn_k: DEFAULT_KNN,
        }
    }
}

/// Indices of up to `m` points strictly closer than `r` to `center`, drawn
/// uniformly without replacement and returned in ascending order.
pub fn ball_query(cloud: &PointCloud, center: Point3, r: f64, m: usize, seed: u64) -> Vec<usize> {
    let r2 = r * r;
    let eligible: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.points[i].distance_squared(center) < r2).collect();
    if eligible.len() <= m {
        return eligible;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample_indices(&mut rng, eligible.len(), m).into_iter().map(|k| eligible[k]).collect();
    picked.sort_unstable();
    picked
}

/// Full `S³` lattice centered on `center` with the given spacing, in
/// x-major order.
pub fn lattice(center: Point3, size: usize, interval: [f64; 3]) -> Vec<Point3> {
    let mid = (size as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(size * size * size);
    for i in 0..size {
        for j in 0..size {
            for k in 0..size {
                out.push(
                    center
                        + Point3::new(
                            (i as f64 - mid) * interval[0],
                            (j as f64 - mid) * interval[1],
                            (k as f64 - mid) * interval[2],
                        ),
                );
            }
        }
    }
    out
}

/// Uniform subsample of `min(m, S³)` lattice points around `center`.
pub fn virtual_grid(center: Point3, size: usize, interval: [f64; 3], m: usize, seed: u64) -> Vec<Point3> {
    let full = lattice(center, size, interval);
    if full.len() <= m {
        return full;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample_indices(&mut rng, full.len(), m).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| full[i]).collect()
}

/// Inverse-distance weighted mean of the features of the `k` nearest points.
/// An exact hit returns that point's feature.
pub fn knn_interpolate(query: Point3, points: &[Point3], features: &[Vec<f64>], k: usize) -> Vec<f64> {
    let width = features.first().map_or(0, Vec::len);
    if points.is_empty() || k == 0 {
        return vec![0.0; width];
    }
    let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, p) in points.iter().enumerate() {
        let d2 = p.distance_squared(query);
        if nearest.len() < k || d2 < nearest[nearest.len() - 1].0 {
            let pos = nearest.partition_point(|&(d, _)| d <= d2);
            nearest.insert(pos, (d2, i));
            nearest.truncate(k);
        }
    }
    if nearest[0].0 == 0.0 {
        return features[nearest[0].1].clone();
    }
    let mut out = vec![0.0; width];
    let mut total = 0.0;
    for &(d2, i) in &nearest {
        let w = 1.0 / d2.sqrt();
        total += w;
        for (o, f) in out.iter_mut().zip(&features[i]) {
            *o += w * f;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    out
}

/// Raw and virtual points gathered around one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSample {
    pub candidate: Candidate,
    pub raw_indices: Vec<usize>,
    pub raw_points: Vec<Point3>,
    pub raw_features: Vec<Vec<f64>>,
    pub virtual_points: Vec<Point3>,
    pub virtual_features: Vec<Vec<f64>>,
}

impl LocalSample {
    pub fn len(&self) -> usize {
        self.raw_points.len() + self.virtual_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Raw points first, then virtual points; the order used by [`ImplicitAssignment`].
    pub fn points(&self) -> impl Iterator<Item = &Point3> + '_ {
        self.raw_points.iter().chain(&self.virtual_points)
    }

    pub fn features(&self) -> impl Iterator<Item = &Vec<f64>> + '_ {
        self.raw_features.iter().chain(&self.virtual_features)
    }
}

/// Builds the local sample for `candidate`. Virtual point features are
/// interpolated from `point_features` of the whole cloud.
pub fn build_local_sample(
    cloud: &PointCloud,
    point_features: &[Vec<f64>],
    candidate: &Candidate,
    cfg: &SamplingConfig,
    seed: u64,
) -> LocalSample {
    let c = candidate.position;
    let raw_indices = ball_query(cloud, c, cfg.radius, cfg.max_points, seed);
    let raw_points = raw_indices.iter().map(|&i| cloud.points[i]).collect();
    let raw_features = raw_indices.iter().map(|&i| point_features[i].clone()).collect();
    let virtual_points = virtual_grid(c, cfg.grid_size, cfg.interval, cfg.max_points, seed.wrapping_add(1));
    let virtual_features = virtual_points
        .iter()
        .map(|v| knn_interpolate(*v, &cloud.points, point_features, cfg.knn_k))
        .collect();
    LocalSample { candidate: candidate.clone(), raw_indices, raw_points, raw_features, virtual_points, virtual_features }
}

/// Per-point implicit values over a [`LocalSample`] (raw points first).
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitAssignment {
    pub values: Vec<f64>,
    pub inside: Vec<bool>,
    pub threshold: f64,
    pub raw_count: usize,
}

impl ImplicitAssignment {
    pub fn from_values(values: Vec<f64>, threshold: f64, raw_count: usize) -> Self {
        let inside = values.iter().map(|&v| v > threshold).collect();
        Self { values, inside, threshold, raw_count }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Layer shapes of the conditioned pointwise network for feature width `f`.
pub fn kernel_layers(feature_width: usize) -> (Dense, Dense) {
    let first = Dense::new(feature_width + 3, KERNEL_CHANNELS, 0);
    let second = Dense::new(KERNEL_CHANNELS, 1, first.end());
    (first, second)
}

/// Length of θ: `(F+3+1)·16 + (16+1)`.
pub fn theta_len(feature_width: usize) -> usize {
    let (a, b) = kernel_layers(feature_width);
    a.param_count() + b.param_count()
}

/// Weights of the kernel generator: one affine map followed by a scaled `tanh`,
/// from `[feature; position·POSITION_SCALE]` to θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub feature_width: usize,
    pub params: Vec<f64>,
}

impl GeneratorParams {
    pub fn layer(feature_width: usize) -> Dense {
        Dense::new(feature_width + 3, theta_len(feature_width), 0)
    }

    pub fn zeros(feature_width: usize) -> Self {
        Self { feature_width, params: vec![0.0; Self::layer(feature_width).param_count()] }
    }

    /// Gaussian weights with standard deviation `scale / sqrt(fan_in)`, zero bias.
    pub fn random(feature_width: usize, scale: f64, seed: u64) -> Self {
        let layer = Self::layer(feature_width);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale / (layer.input as f64).sqrt()).expect("finite scale");
        let mut params = vec![0.0; layer.param_count()];
        for w in &mut params[..layer.output * layer.input] {
            *w = normal.sample(&mut rng);
        }
        Self { feature_width, params }
    }

    pub fn input(candidate: &Candidate) -> Vec<f64> {
        let p = candidate.position * POSITION_SCALE;
        candidate.feature.iter().copied().chain([p.x, p.y, p.z]).collect()
    }
}

/// Per-candidate weights of the pointwise network.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedKernels {
    pub feature_width: usize,
    pub theta: Vec<f64>,
}

impl ConditionedKernels {
    pub fn layers(&self) -> (Dense, Dense) {
        kernel_layers(self.feature_width)
    }

    /// Returns the hidden activation and the output logit for one point input.
    pub fn forward(&self, input: &[f64]) -> (Vec<f64>, f64) {
        let (first, second) = self.layers();
        let mut hidden = first.forward(&self.theta, input);
        relu_in_place(&mut hidden);
        let logit = second.forward(&self.theta, &hidden)[0];
        (hidden, logit)
    }
}

/// `θ = c·tanh(G·[feature; position·s] + g)` with `c = THETA_SCALE`.
pub fn condition_kernels(candidate: &Candidate, generator: &GeneratorParams) -> Result<ConditionedKernels, ImplicitError> {
    if candidate.feature.len() != generator.feature_width {
        return Err(ImplicitError::ShapeMismatch { expected: generator.feature_width, actual: candidate.feature.len() });
    }
    if generator.params.iter().any(|v| !v.is_finite()) {
        return Err(ImplicitError::NonFinite);
    }
    let layer = GeneratorParams::layer(generator.feature_width);
    let theta = layer.forward(&generator.params, &GeneratorParams::input(candidate)).into_iter().map(theta_activation).collect();
    Ok(ConditionedKernels { feature_width: generator.feature_width, theta })
}

/// Pointwise network input: `[feature; point − center]`.
pub fn point_input(feature: &[f64], point: Point3, center: Point3) -> Vec<f64> {
    let d = point - center;
    feature.iter().copied().chain([d.x, d.y, d.z]).collect()
}

/// Runs the conditioned network over every raw and virtual point.
pub fn assign_values(sample: &LocalSample, kernels: &ConditionedKernels) -> Result<ImplicitAssignment, ImplicitError> {
    if let Some(f) = sample.features().find(|f| f.len() != kernels.feature_width) {
        return Err(ImplicitError::ShapeMismatch { expected: kernels.feature_width, actual: f.len() });
    }
    let center = sample.candidate.position;
    let values = sample
        .points()
        .zip(sample.features())
        .map(|(p, f)| sigmoid(kernels.forward(&point_input(f, *p, center)).1))
        .collect();
    Ok(ImplicitAssignment::from_values(values, DEFAULT_THRESHOLD, sample.raw_points.len()))
}

/// Ground-truth labels: 1 inside `gt`, 0 outside.
pub fn oracle_assignment(sample: &LocalSample, gt: &OrientedBox3) -> ImplicitAssignment {
    let values = sample.points().map(|p| if point_in_box(*p, gt) { 1.0 } else { 0.0 }).collect();
    ImplicitAssignment::from_values(values, DEFAULT_THRESHOLD, sample.raw_points.len())
}
