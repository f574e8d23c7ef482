use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{box_corners, OrientedBox3, Point3};

/// Monte-Carlo IoU estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub iou: f64,
    pub std_error: f64,
    /// Samples that landed in either box.
    pub union_hits: usize,
    pub samples: usize,
}

struct Membership {
    center: Point3,
    cos: f64,
    sin: f64,
    half: [f64; 3],
}

impl Membership {
    fn new(b: &OrientedBox3) -> Self {
        let (sin, cos) = b.yaw.sin_cos();
        Self { center: b.center, cos, sin, half: [0.5 * b.dims.l, 0.5 * b.dims.w, 0.5 * b.dims.h] }
    }

    fn contains(&self, p: Point3) -> bool {
        let d = p - self.center;
        let x = self.cos * d.x + self.sin * d.y;
        let y = -self.sin * d.x + self.cos * d.y;
        x.abs() <= self.half[0] && y.abs() <= self.half[1] && d.z.abs() <= self.half[2]
    }
}

/// Estimates IoU by sampling the axis-aligned hull of both boxes.
///
/// The hull is split into `n³ ≥ samples` equal cells with one uniform draw per cell
/// (jittered sampling, so every draw is still marginally uniform over the hull). The
/// reported error is the binomial standard error of the intersection share among the
/// union hits, using the add-one smoothed proportion so it stays positive at 0 and 1.
pub fn iou_oracle(a: &OrientedBox3, b: &OrientedBox3, samples: usize, seed: u64) -> OracleEstimate {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in box_corners(a).into_iter().chain(box_corners(b)) {
        for (k, v) in c.to_array().into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let n = (samples.max(1) as f64).cbrt().ceil() as usize;
    let n = if n * n * n < samples { n + 1 } else { n };
    let step = [0, 1, 2].map(|k| (hi[k] - lo[k]) / n as f64);

    let (ma, mb) = (Membership::new(a), Membership::new(b));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut in_a, mut in_b, mut in_both) = (0usize, 0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let p = Point3::new(
                    lo[0] + (i as f64 + rng.random::<f64>()) * step[0],
                    lo[1] + (j as f64 + rng.random::<f64>()) * step[1],
                    lo[2] + (k as f64 + rng.random::<f64>()) * step[2],
                );
                let (ia, ib) = (ma.contains(p), mb.contains(p));
                in_a += ia as usize;
                in_b += ib as usize;
                in_both += (ia && ib) as usize;
            }
        }
    }
    let union = in_a + in_b - in_both;
    if union == 0 {
        return OracleEstimate { iou: 0.0, std_error: 0.0, union_hits: 0, samples: n * n * n };
    }
    let iou = in_both as f64 / union as f64;
    let smoothed = (in_both as f64 + 1.0) / (union as f64 + 2.0);
    let std_error = (smoothed * (1.0 - smoothed) / union as f64).sqrt();
    OracleEstimate { iou, std_error, union_hits: union, samples: n * n * n }
}
