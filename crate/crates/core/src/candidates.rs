//! Candidate-center proposals: a bird's-eye-view seed grid, per-seed shifting
//! toward object centers, 3D centerness scoring and cube suppression.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_in_box, to_box_frame, OrientedBox3, Point3, PointCloud};

/// Feature width of the default provider.
pub const FEATURE_WIDTH: usize = 32;
/// Default number of candidates kept by [`cube_nms`].
pub const DEFAULT_TOP_K: usize = 512;
/// Candidates scoring below this are dropped before suppression.
pub const MIN_CENTERNESS: f64 = 1e-4;
/// Edge length of the suppression cube (meters).
pub const CUBE_SIZE: f64 = 1.0;
/// BEV seed cell edge (meters): 0.05 m voxels downsampled 8×.
pub const DEFAULT_CELL_SIZE: f64 = 0.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CandidateError {
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub position: Point3,
    pub feature: Vec<f64>,
    pub centerness: f64,
    pub source_index: usize,
}

impl Candidate {
    /// A candidate with a zero feature vector, for oracle experiments that place
    /// centers directly.
    pub fn at(position: Point3, feature_width: usize) -> Self {
        Self { position, feature: vec![0.0; feature_width], centerness: 1.0, source_index: 0 }
    }
}

/// Produces a fixed-width descriptor for a group of points around `anchor`.
pub trait FeatureProvider: Sync {
    fn width(&self) -> usize;
    fn describe(&self, cloud: &PointCloud, members: &[usize], anchor: Point3) -> Vec<f64>;
}

/// Hand-crafted local statistics, zero padded to `width`.
///
/// Layout: `ln(1+count)`, mean height, mean intensity, the three covariance
/// eigenvalues (descending), mean x/y offset from the anchor, anchor azimuth as
/// cos/sin, anchor range / 50 m, height spread, and the dominant horizontal
/// direction as `(cos 2φ, sin 2φ)` scaled by anisotropy, then that direction as
/// `(cos φ, sin φ)` with `φ ∈ [0, π)`, the footprint extents along it and across
/// it, and the footprint midpoint in the same axes relative to the anchor.
#[derive(Debug, Clone, Copy)]
pub struct LocalStatistics {
    pub width: usize,
}

impl Default for LocalStatistics {
    fn default() -> Self {
        Self { width: FEATURE_WIDTH }
    }
}

const STAT_COUNT: usize = 20;

impl FeatureProvider for LocalStatistics {
    fn width(&self) -> usize {
        self.width
    }

    fn describe(&self, cloud: &PointCloud, members: &[usize], anchor: Point3) -> Vec<f64> {
        let mut f = vec![0.0; self.width.max(STAT_COUNT)];
        let azimuth = anchor.y.atan2(anchor.x);
        f[8] = azimuth.cos();
        f[9] = azimuth.sin();
        f[10] = anchor.x.hypot(anchor.y) / 50.0;
        if !members.is_empty() {
            let n = members.len() as f64;
            let mut mean = Point3::ORIGIN;
            let mut intensity = 0.0;
            let (mut zlo, mut zhi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in members {
                let p = cloud.points[i];
                mean += p;
                intensity += cloud.intensity[i];
                zlo = zlo.min(p.z);
                zhi = zhi.max(p.z);
            }
            mean = mean * (1.0 / n);
            let mut cov = Matrix3::<f64>::zeros();
            for &i in members {
                let d = cloud.points[i] - mean;
                let v = nalgebra::Vector3::new(d.x, d.y, d.z);
                cov += v * v.transpose();
            }
            cov /= n;
            let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|e| e.max(0.0)).collect();
            eig.sort_by(|a, b| b.total_cmp(a));

            f[0] = n.ln_1p();
            f[1] = mean.z;
            f[2] = intensity / n;
            f[3..6].copy_from_slice(&eig);
            f[6] = mean.x - anchor.x;
            f[7] = mean.y - anchor.y;
            f[11] = zhi - zlo;
            let (sxx, syy, sxy) = (cov[(0, 0)], cov[(1, 1)], cov[(0, 1)]);
            let spread = sxx + syy;
            if spread > 1e-12 {
                f[12] = (sxx - syy) / spread;
                f[13] = 2.0 * sxy / spread;
            }
            let phi = (0.5 * (2.0 * sxy).atan2(sxx - syy)).rem_euclid(std::f64::consts::PI);
            let (u, v) = (Point3::new(phi.cos(), phi.sin(), 0.0), Point3::new(-phi.sin(), phi.cos(), 0.0));
            f[14] = u.x;
            f[15] = u.y;
            let (mut ulo, mut uhi, mut vlo, mut vhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for &i in members {
                let d = cloud.points[i] - anchor;
                ulo = ulo.min(d.dot(u));
                uhi = uhi.max(d.dot(u));
                vlo = vlo.min(d.dot(v));
                vhi = vhi.max(d.dot(v));
            }
            f[16] = uhi - ulo;
            f[17] = vhi - vlo;
            f[18] = 0.5 * (uhi + ulo);
            f[19] = 0.5 * (vhi + vlo);
        }
        f.truncate(self.width);
        f
    }
}

/// One seed per occupied bird's-eye-view cell, at the cell center with `z = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedGrid {
    pub positions: Vec<Point3>,
    pub features: Vec<Vec<f64>>,
    pub cell_size: f64,
    /// Cloud indices falling in each seed's cell.
    pub members: Vec<Vec<usize>>,
}

impl SeedGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Per-point features: each point takes the descriptor of its cell.
    pub fn point_features(&self, n_points: usize) -> Vec<Vec<f64>> {
        let width = self.features.first().map_or(0, Vec::len);
        let mut out = vec![vec![0.0; width]; n_points];
        for (seed, members) in self.members.iter().enumerate() {
            for &i in members {
                out[i].clone_from(&self.features[seed]);
            }
        }
        out
    }
}

fn cell_of(p: Point3, cell_size: f64) -> (i64, i64) {
    ((p.x / cell_size).floor() as i64, (p.y / cell_size).floor() as i64)
}

pub fn make_seed_grid(cloud: &PointCloud, cell_size: f64, provider: &dyn FeatureProvider) -> Result<SeedGrid, CandidateError> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(CandidateError::InvalidCellSize(cell_size));
    }
    let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        cells.entry(cell_of(*p, cell_size)).or_default().push(i);
    }
    let (keys, members): (Vec<_>, Vec<_>) = cells.into_iter().unzip();
    let positions: Vec<Point3> = keys
        .iter()
        .map(|&(i, j)| Point3::new((i as f64 + 0.5) * cell_size, (j as f64 + 0.5) * cell_size, 0.0))
        .collect();
    let features = positions
        .par_iter()
        .zip(members.par_iter())
        .map(|(anchor, m)| provider.describe(cloud, m, *anchor))
        .collect();
    Ok(SeedGrid { positions, features, cell_size, members })
}

/// 3D centerness: cube root of the per-axis `min/max` face-distance ratios; 0 outside.
pub fn centerness(p: Point3, b: &OrientedBox3) -> f64 {
    let q = to_box_frame(p, b);
    let half = [0.5 * b.dims.l, 0.5 * b.dims.w, 0.5 * b.dims.h];
    let mut prod = 1.0;
    for (c, h) in q.to_array().into_iter().zip(half) {
        let (near, far) = (h - c, h + c);
        if near <= 0.0 || far <= 0.0 {
            return 0.0;
        }
        prod *= near.min(far) / near.max(far);
    }
    prod.cbrt().clamp(0.0, 1.0)
}

/// Predicts where a seed should move and how its feature should change.
pub trait Shifter: Sync {
    /// Returns `(position offset, feature offset)`.
    fn shift(&self, position: Point3, feature: &[f64]) -> (Point3, Vec<f64>);
}

pub trait CenternessScorer: Sync {
    fn score(&self, position: Point3, feature: &[f64]) -> f64;
}

/// Moves a seed to the center of the ground-truth box whose footprint contains it;
/// seeds outside every footprint stay put. Feature offsets are zero.
#[derive(Debug, Clone, Copy)]
pub struct OracleShifter<'a> {
    pub boxes: &'a [OrientedBox3],
}

impl OracleShifter<'_> {
    /// The box whose footprint contains the seed, if any.
    pub fn enclosing(&self, position: Point3) -> Option<&OrientedBox3> {
        self.boxes
            .iter()
            .find(|b| point_in_box(Point3::new(position.x, position.y, b.center.z), b))
    }
}

impl Shifter for OracleShifter<'_> {
    fn shift(&self, position: Point3, feature: &[f64]) -> (Point3, Vec<f64>) {
        let offset = self.enclosing(position).map_or(Point3::ORIGIN, |b| b.center - position);
        (offset, vec![0.0; feature.len()])
    }
}

/// Scores a position by its best centerness against the ground-truth boxes.
#[derive(Debug, Clone, Copy)]
pub struct OracleScorer<'a> {
    pub boxes: &'a [OrientedBox3],
}

impl CenternessScorer for OracleScorer<'_> {
    fn score(&self, position: Point3, _feature: &[f64]) -> f64 {
        self.boxes.iter().map(|b| centerness(position, b)).fold(0.0, f64::max)
    }
}

/// Applies `shifter` to every seed and scores the shifted positions.
pub fn shift_candidates(grid: &SeedGrid, shifter: &dyn Shifter, scorer: &dyn CenternessScorer) -> Vec<Candidate> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (offset, feature_offset) = shifter.shift(grid.positions[i], &grid.features[i]);
            let position = grid.positions[i] + offset;
            let feature: Vec<f64> = grid.features[i].iter().zip(&feature_offset).map(|(f, d)| f + d).collect();
            let centerness = scorer.score(position, &feature).clamp(0.0, 1.0);
            Candidate { position, feature, centerness, source_index: i }
        })
        .collect()
}

fn cubes_overlap(a: Point3, b: Point3) -> bool {
    (a.x - b.x).abs() < CUBE_SIZE && (a.y - b.y).abs() < CUBE_SIZE && (a.z - b.z).abs() < CUBE_SIZE
}

/// Greedy suppression treating each candidate as a unit cube around its position.
/// Keeps at most `k`, ordered by descending centerness (ties by `source_index`).
pub fn cube_nms(cands: &[Candidate], k: usize) -> Vec<Candidate> {
    let mut order: Vec<&Candidate> = cands.iter().filter(|c| c.centerness >= MIN_CENTERNESS).collect();
    order.sort_by(|a, b| match b.centerness.total_cmp(&a.centerness) {
        Ordering::Equal => a.source_index.cmp(&b.source_index),
        o => o,
    });
    let mut kept: Vec<Candidate> = Vec::new();
    for c in order {
        if kept.len() >= k {
            break;
        }
        if kept.iter().all(|p| !cubes_overlap(p.position, c.position)) {
            kept.push(c.clone());
        }
    }
    kept
}
