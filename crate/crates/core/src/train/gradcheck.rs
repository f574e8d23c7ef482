use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter index at which the maximum occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the analytic gradient returned by `f` against central differences
/// over every parameter. Relative error uses `max(|a|, |n|, 1e-8)` as denominator.
pub fn grad_check<F>(f: F, params: &[f64], h: f64) -> Result<GradCheckReport, TrainError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let all: Vec<usize> = (0..params.len()).collect();
    grad_check_indices(f, params, h, &all)
}

/// Like [`grad_check`] but only over `indices`.
pub fn grad_check_indices<F>(f: F, params: &[f64], h: f64, indices: &[usize]) -> Result<GradCheckReport, TrainError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(TrainError::InvalidConfig(format!("finite-difference step {h} outside [1e-6, 1e-3]")));
    }
    let (_, analytic) = f(params);
    if analytic.len() != params.len() {
        return Err(TrainError::ShapeMismatch(format!("gradient has {} entries for {} parameters", analytic.len(), params.len())));
    }
    let mut report = GradCheckReport { max_relative_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    let mut work = params.to_vec();
    for &i in indices {
        let orig = work[i];
        work[i] = orig + h;
        let up = f(&work).0;
        work[i] = orig - h;
        let down = f(&work).0;
        work[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_relative_error || report.checked == 0 {
            report = GradCheckReport { max_relative_error: rel, worst_index: i, analytic: a, numeric, checked: report.checked };
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_toy() {
        let f = |p: &[f64]| {
            let loss = p.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x * x).sum::<f64>();
            let grad = p.iter().enumerate().map(|(i, x)| 2.0 * (i + 1) as f64 * x).collect();
            (loss, grad)
        };
        let r = grad_check(f, &[0.3, -1.2, 2.5, 0.0], 1e-4).unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |p: &[f64]| (p[0] * p[0], vec![p[0]]);
        let r = grad_check(f, &[1.0], 1e-5).unwrap();
        assert!((r.max_relative_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn step_bounds() {
        let f = |p: &[f64]| (p[0], vec![1.0]);
        assert!(grad_check(f, &[1.0], 1e-2).is_err());
        assert!(grad_check(f, &[1.0], 1e-7).is_err());
    }
}
