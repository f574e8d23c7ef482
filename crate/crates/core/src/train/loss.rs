//! Scalar losses and their derivatives with respect to the prediction.

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `0.5·d²` for `|d| < 1`, else `|d| − 0.5`, with `d = pred − target`.
pub fn smooth_l1(pred: f64, target: f64) -> f64 {
    let d = pred - target;
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

pub fn smooth_l1_grad(pred: f64, target: f64) -> f64 {
    let d = pred - target;
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Componentwise sum.
pub fn smooth_l1_sum(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| smooth_l1(*p, *t)).sum()
}

pub fn bce(p: f64, target: f64) -> f64 {
    let p = clamp_prob(p);
    -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
}

/// Derivative of [`bce`] in `p`; zero where the clamp is active.
pub fn bce_grad(p: f64, target: f64) -> f64 {
    if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
        return 0.0;
    }
    (p - target) / (p * (1.0 - p))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalParams {
    /// `α` on the positive share of the target, 1 on the negative share.
    fn weight(&self, target: f64) -> f64 {
        self.alpha * target + (1.0 - target)
    }
}

/// Quality-focal loss `w(t)·|t − p|^γ·BCE(p, t)`, which accepts soft targets and
/// reduces to plain BCE at `γ = 0, α = 1`.
pub fn focal_loss(p: f64, target: f64, fp: FocalParams) -> f64 {
    let pc = clamp_prob(p);
    fp.weight(target) * (target - pc).abs().powf(fp.gamma) * bce(pc, target)
}

pub fn focal_grad(p: f64, target: f64, fp: FocalParams) -> f64 {
    if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
        return 0.0;
    }
    let m = (target - p).abs();
    let modulating = m.powf(fp.gamma);
    let d_mod = if m == 0.0 || fp.gamma == 0.0 { 0.0 } else { fp.gamma * m.powf(fp.gamma - 1.0) * (p - target).signum() };
    fp.weight(target) * (d_mod * bce(p, target) + modulating * bce_grad(p, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.0, 0.0), 0.0);
        assert_eq!(smooth_l1(0.5, 0.0), 0.125);
        assert_eq!(smooth_l1(2.0, 0.0), 1.5);
        assert_eq!(smooth_l1(-2.0, 0.0), 1.5);
        assert_eq!(smooth_l1_sum(&[0.5, 2.0], &[0.0, 0.0]), 1.625);
    }

    #[test]
    fn bce_values() {
        assert!(bce(1.0, 1.0) < 1e-6);
        assert!((bce(0.5, 1.0) - LN_2).abs() < 1e-12);
        for p in [0.1, 0.3, 0.77] {
            assert!((bce(p, 0.0) - bce(1.0 - p, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_values() {
        let fp = FocalParams::default();
        assert!(focal_loss(1.0, 1.0, fp) < 1e-12);
        assert!((focal_loss(0.5, 1.0, fp) - 0.25 * 0.25 * LN_2).abs() < 1e-12);
        assert!((focal_loss(0.5, 1.0, fp) - 0.04332).abs() < 1e-5);
        let plain = FocalParams { alpha: 1.0, gamma: 0.0 };
        for (p, t) in [(0.2, 1.0), (0.7, 0.0), (0.4, 0.35)] {
            assert!((focal_loss(p, t, plain) - bce(p, t)).abs() < 1e-15);
        }
    }

    fn numeric(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_differences() {
        let fp = FocalParams::default();
        for (p, t) in [(0.2, 1.0), (0.7, 0.0), (0.4, 0.35), (0.9, 0.6)] {
            assert!((bce_grad(p, t) - numeric(|x| bce(x, t), p)).abs() < 1e-6);
            assert!((focal_grad(p, t, fp) - numeric(|x| focal_loss(x, t, fp), p)).abs() < 1e-6);
        }
        for (x, t) in [(0.3, 0.0), (2.5, 0.0), (-4.0, 1.0)] {
            assert!((smooth_l1_grad(x, t) - numeric(|v| smooth_l1(v, t), x)).abs() < 1e-6);
        }
    }

    #[test]
    fn losses_nonnegative() {
        let fp = FocalParams::default();
        for i in 0..=20 {
            let p = i as f64 / 20.0;
            for t in [0.0, 0.3, 1.0] {
                assert!(bce(p, t) >= 0.0);
                assert!(focal_loss(p, t, fp) >= 0.0);
                assert!(smooth_l1(p, t) >= 0.0);
            }
        }
    }
}
