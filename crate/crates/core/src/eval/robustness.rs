use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::boundary::{generate_boundary, BoundaryConfig, BoundaryError, Strategy};
use crate::candidates::Candidate;
use crate::geometry::{iou_3d, OrientedBox3};
use crate::implicit::{build_local_sample, oracle_assignment, SamplingConfig};
use crate::rng::derive_seed;
use crate::scenegen::{mask_inside_points, perturb_box_center, Scene};

/// Center-shift ranges (meters) of the parameter-deviation experiment.
pub const DEFAULT_SHIFTS: [f64; 3] = [0.1, 0.2, 0.3];
/// Fractions of inside points removed in the masking experiment.
pub const DEFAULT_MASK_FRACTIONS: [f64; 3] = [0.07, 0.19, 0.40];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub parametric_trials: usize,
    pub mask_trials: usize,
    pub seed: u64,
    pub sampling: SamplingConfig,
    pub boundary: BoundaryConfig,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            parametric_trials: 100,
            mask_trials: 5,
            seed: 0,
            sampling: SamplingConfig::default(),
            boundary: BoundaryConfig { strategy: Strategy::Sampling, ..Default::default() },
        }
    }
}

/// Distribution of per-trial IoUs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouSummary {
    pub count: usize,
    pub mean: f64,
    pub p10: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub fraction_below_0_7: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl IouSummary {
    pub fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let mean = if n == 0 { 0.0 } else { s.iter().sum::<f64>() / n as f64 };
        Self {
            count: n,
            mean,
            p10: quantile(&s, 0.1),
            p25: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            p75: quantile(&s, 0.75),
            p90: quantile(&s, 0.9),
            fraction_below_0_7: if n == 0 { 0.0 } else { s.iter().filter(|v| **v < 0.7).count() as f64 / n as f64 },
        }
    }
}

/// One experimental setting with every trial IoU kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSeries {
    pub kind: String,
    pub setting: String,
    pub values: Vec<f64>,
    pub summary: IouSummary,
}

impl RobustnessSeries {
    fn new(kind: &str, setting: String, values: Vec<f64>) -> Self {
        let summary = IouSummary::of(&values);
        Self { kind: kind.to_string(), setting, values, summary }
    }
}

fn boxes_of(scenes: &[Scene]) -> Vec<(usize, usize, OrientedBox3)> {
    scenes
        .iter()
        .enumerate()
        .flat_map(|(s, scene)| scene.boxes.iter().enumerate().map(move |(i, b)| (s, i, b.bbox)))
        .collect()
}

/// IoU between each ground-truth box and copies with centers shifted uniformly
/// within `±shifts`, `trials` copies per box.
pub fn robustness_parametric(scenes: &[Scene], shifts: [f64; 3], trials: usize, seed: u64) -> Result<RobustnessSeries, EvalError> {
    if trials == 0 {
        return Err(EvalError::InvalidConfig("trials must be >= 1".into()));
    }
    if shifts.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(EvalError::InvalidConfig(format!("shift ranges must be finite and nonnegative, got {shifts:?}")));
    }
    let per_box: Vec<Vec<f64>> = boxes_of(scenes)
        .par_iter()
        .map(|&(s, i, b)| {
            let box_seed = derive_seed(derive_seed(seed, s as u64), i as u64);
            (0..trials).map(|t| iou_3d(&perturb_box_center(&b, shifts, derive_seed(box_seed, t as u64)), &b)).collect()
        })
        .collect();
    let setting = format!("shift ±({}, {}, {}) m", shifts[0], shifts[1], shifts[2]);
    Ok(RobustnessSeries::new("parametric", setting, per_box.concat()))
}

/// Fits a box to `gt` in `scene` using oracle implicit values around a candidate
/// at the box center. Boxes left without inside points score 0.
pub fn fit_masked_box(scene: &Scene, gt: &OrientedBox3, sampling: &SamplingConfig, boundary: &BoundaryConfig, seed: u64) -> Result<f64, EvalError> {
    let empty = vec![Vec::new(); scene.cloud.len()];
    let cand = Candidate::at(gt.center, 0);
    let sample = build_local_sample(&scene.cloud, &empty, &cand, sampling, seed);
    let assign = oracle_assignment(&sample, gt);
    match generate_boundary(&sample, &assign, boundary) {
        Ok(fit) => Ok(iou_3d(&fit.bbox, gt)),
        Err(BoundaryError::NoInsidePoints) => Ok(0.0),
        Err(e) => Err(EvalError::InvalidConfig(e.to_string())),
    }
}

/// For each fraction: per ground-truth box, remove that fraction of its inside
/// points, fit from oracle values and score against the box.
pub fn robustness_implicit(scenes: &[Scene], fractions: &[f64], cfg: &RobustnessConfig) -> Result<Vec<RobustnessSeries>, EvalError> {
    if cfg.mask_trials == 0 {
        return Err(EvalError::InvalidConfig("trials must be >= 1".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(EvalError::InvalidConfig(format!("mask fraction {f} outside [0, 1)")));
    }
    let boxes = boxes_of(scenes);
    fractions
        .iter()
        .enumerate()
        .map(|(k, &fraction)| {
            let per_box: Result<Vec<Vec<f64>>, EvalError> = boxes
                .par_iter()
                .map(|&(s, i, b)| {
                    let box_seed = derive_seed(derive_seed(derive_seed(cfg.seed, k as u64), s as u64), i as u64);
                    (0..cfg.mask_trials)
                        .map(|t| {
                            let trial_seed = derive_seed(box_seed, t as u64);
                            let masked = mask_inside_points(&scenes[s], i, fraction, trial_seed)
                                .map_err(|e| EvalError::Scene { scene: s, reason: e.to_string() })?;
                            fit_masked_box(&masked, &b, &cfg.sampling, &cfg.boundary, derive_seed(trial_seed, 1))
                        })
                        .collect()
                })
                .collect();
            Ok(RobustnessSeries::new("implicit", format!("mask {:.0}%", fraction * 100.0), per_box?.concat()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, SceneConfig};

    #[test]
    fn zero_shift_is_exact() {
        let scenes = vec![generate_scene(&SceneConfig { seed: 1, ..Default::default() }).unwrap()];
        let r = robustness_parametric(&scenes, [0.0; 3], 3, 0).unwrap();
        assert!(r.values.iter().all(|v| (*v - 1.0).abs() < 1e-9));
        assert_eq!(r.summary.count, 3 * scenes[0].boxes.len());
    }

    #[test]
    fn larger_shifts_hurt_more() {
        let scenes = vec![generate_scene(&SceneConfig { seed: 2, ..Default::default() }).unwrap()];
        let small = robustness_parametric(&scenes, [0.05, 0.1, 0.15], 50, 4).unwrap();
        let large = robustness_parametric(&scenes, [0.1, 0.2, 0.3], 50, 4).unwrap();
        assert!(large.summary.mean < small.summary.mean);
    }

    #[test]
    fn summary_quantiles() {
        let s = IouSummary::of(&[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(s.median, 0.5);
        assert_eq!(s.p25, 0.25);
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.fraction_below_0_7, 0.6);
    }

    #[test]
    fn unmasked_dense_fit_is_good() {
        let scenes = vec![generate_scene(&SceneConfig::dense(800, 3)).unwrap()];
        let cfg = RobustnessConfig { mask_trials: 1, ..Default::default() };
        let r = robustness_implicit(&scenes, &[0.0], &cfg).unwrap();
        assert!(r[0].summary.mean > 0.8, "{:?}", r[0].summary);
    }
}
