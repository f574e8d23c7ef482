//! Box fitting from implicitly classified inside points.
//!
//! Two strategies share one angle search: for each of `h` yaws in `[0, π/2)` take
//! the minimum box at that yaw and keep the one with the smallest accumulated
//! point-to-surface distance. *Sampling* fits the inside points directly;
//! *centrosymmetry* first adds each point's reflection through the candidate
//! center, which pins the box center to the candidate.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{min_box_at_yaw, nearest_face_distance, normalize_yaw, Dims, GeometryError, OrientedBox3, Point3};
use crate::implicit::{ImplicitAssignment, LocalSample, DEFAULT_THRESHOLD};

pub const DEFAULT_ANGLES: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundaryError {
    #[error("no point exceeds the implicit threshold")]
    NoInsidePoints,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid boundary config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Sampling,
    Centrosymmetry,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sampling" => Ok(Strategy::Sampling),
            "centrosymmetry" => Ok(Strategy::Centrosymmetry),
            other => Err(format!("unknown strategy '{other}' (expected sampling or centrosymmetry)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Sampling => "sampling",
            Strategy::Centrosymmetry => "centrosymmetry",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub strategy: Strategy,
    /// Number of yaw partitions of `[0, π/2)`.
    pub angles: usize,
    pub threshold: f64,
    /// Fit with virtual points as well as raw points.
    pub use_virtual: bool,
    /// Score angles with raw inside points only, even when virtual points take part in the fit.
    pub score_raw_only: bool,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Sampling,
            angles: DEFAULT_ANGLES,
            threshold: DEFAULT_THRESHOLD,
            use_virtual: true,
            score_raw_only: false,
        }
    }
}

impl BoundaryConfig {
    pub fn validate(&self) -> Result<(), BoundaryError> {
        if self.angles == 0 {
            return Err(BoundaryError::InvalidConfig("angle count must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(BoundaryError::InvalidConfig(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(rename = "box")]
    pub bbox: OrientedBox3,
    pub angle_index: usize,
    pub score: f64,
    pub strategy: Strategy,
    pub inside_count: usize,
}

/// Points whose implicit value exceeds `t`, raw first; virtual points only when
/// `include_virtual` is set.
pub fn inside_points(sample: &LocalSample, assignment: &ImplicitAssignment, t: f64, include_virtual: bool) -> Vec<Point3> {
    let limit = if include_virtual { sample.len() } else { sample.raw_points.len() };
    sample
        .points()
        .zip(&assignment.values)
        .take(limit)
        .filter(|(_, &v)| v > t)
        .map(|(p, _)| *p)
        .collect()
}

/// `θ_j = j·(π/2)/h` for `j = 0..h`.
pub fn angle_set(h: usize) -> Vec<f64> {
    (0..h).map(|j| j as f64 * FRAC_PI_2 / h as f64).collect()
}

/// Sum of nearest-face distances of the points.
pub fn fit_score(points: &[Point3], b: &OrientedBox3) -> Result<f64, GeometryError> {
    points.iter().map(|p| nearest_face_distance(*p, b)).sum()
}

fn search_angles(fit_points: &[Point3], score_points: &[Point3], h: usize, strategy: Strategy) -> Result<FitResult, BoundaryError> {
    if fit_points.is_empty() {
        return Err(GeometryError::EmptyInput.into());
    }
    let score_points = if score_points.is_empty() { fit_points } else { score_points };
    let mut best: Option<(FitResult, f64)> = None;
    for (j, yaw) in angle_set(h).into_iter().enumerate() {
        let bbox = min_box_at_yaw(fit_points, yaw)?;
        let score = fit_score(score_points, &bbox)?;
        let volume = bbox.volume();
        let better = match &best {
            None => true,
            Some((b, v)) => {
                let tol = 1e-12 * (1.0 + b.score.abs());
                score < b.score - tol || ((score - b.score).abs() <= tol && volume < *v - 1e-12 * (1.0 + v))
            }
        };
        if better {
            let fit = FitResult { bbox, angle_index: j, score, strategy, inside_count: fit_points.len() };
            best = Some((fit, volume));
        }
    }
    Ok(best.expect("h >= 1").0)
}

/// Minimum oriented box over the points, choosing among `h` yaws by fit score
/// (ties: smaller volume, then smaller angle index).
pub fn fit_sampling(points: &[Point3], h: usize) -> Result<FitResult, BoundaryError> {
    search_angles(points, points, h, Strategy::Sampling)
}

/// Reflects every point through `center` and fits the doubled set; the box
/// center is exactly `center`.
pub fn fit_centrosymmetry(points: &[Point3], center: Point3, h: usize) -> Result<FitResult, BoundaryError> {
    let doubled = centrosymmetric_closure(points, center);
    let mut fit = search_angles(&doubled, &doubled, h, Strategy::Centrosymmetry)?;
    fit.bbox.center = center;
    Ok(fit)
}

fn centrosymmetric_closure(points: &[Point3], center: Point3) -> Vec<Point3> {
    points.iter().copied().chain(points.iter().map(|p| center * 2.0 - *p)).collect()
}

/// Keeps the yaw when `l ≥ w`; otherwise swaps length and width and turns the
/// yaw by `π/2`. The occupied volume is unchanged and the result has yaw in `[0, π)`.
pub fn correct_orientation(fit: &FitResult) -> FitResult {
    let mut out = fit.clone();
    let d = fit.bbox.dims;
    if d.l < d.w {
        out.bbox.dims = Dims::new(d.w, d.l, d.h);
        out.bbox.yaw = normalize_yaw(fit.bbox.yaw + FRAC_PI_2);
    }
    if out.bbox.yaw >= PI {
        out.bbox.yaw -= PI;
    }
    out
}

/// Inside points → strategy fit → orientation correction.
pub fn generate_boundary(sample: &LocalSample, assignment: &ImplicitAssignment, cfg: &BoundaryConfig) -> Result<FitResult, BoundaryError> {
    cfg.validate()?;
    let fit_points = inside_points(sample, assignment, cfg.threshold, cfg.use_virtual);
    if fit_points.is_empty() {
        return Err(BoundaryError::NoInsidePoints);
    }
    let raw_inside = if cfg.score_raw_only && cfg.use_virtual {
        inside_points(sample, assignment, cfg.threshold, false)
    } else {
        Vec::new()
    };
    let fit = match cfg.strategy {
        Strategy::Sampling => search_angles(&fit_points, &raw_inside, cfg.angles, Strategy::Sampling)?,
        Strategy::Centrosymmetry => {
            let c = sample.candidate.position;
            let doubled = centrosymmetric_closure(&fit_points, c);
            let score = (!raw_inside.is_empty()).then(|| centrosymmetric_closure(&raw_inside, c)).unwrap_or_default();
            let mut fit = search_angles(&doubled, &score, cfg.angles, Strategy::Centrosymmetry)?;
            fit.bbox.center = c;
            fit
        }
    };
    Ok(correct_orientation(&fit))
}
