//! Synthetic driving scenes: non-overlapping boxes resting on a ground plane and
//! one-sided surface returns as seen from a sensor at the origin.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{from_box_frame, iou_bev, point_in_box, Dims, OrientedBox3, Point3, PointCloud};
use crate::rng::rng_from_seed;

/// Attempts per object before placement gives up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Dimensions drawn below this are clamped up to it.
pub const MIN_OBJECT_DIM: f64 = 0.1;
/// Distances below this are clamped when scaling point density.
const MIN_DENSITY_DISTANCE: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("could not place object {object} without overlap after {attempts} attempts")]
    PlacementFailure { object: usize, attempts: usize },
    #[error("box index {index} out of range for scene with {len} boxes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("mask fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneRange {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for SceneRange {
    /// KITTI-style front view: 70.4 m ahead, ±40 m sideways, ground 3 m below the sensor.
    fn default() -> Self {
        Self { x_min: 0.0, x_max: 70.4, y_min: -40.0, y_max: 40.0, z_min: -3.0, z_max: 1.0 }
    }
}

impl SceneRange {
    pub fn contains(&self, p: Point3) -> bool {
        (self.x_min..=self.x_max).contains(&p.x)
            && (self.y_min..=self.y_max).contains(&p.y)
            && (self.z_min..=self.z_max).contains(&p.z)
    }

    pub fn clamp(&self, p: Point3) -> Point3 {
        Point3::new(
            p.x.clamp(self.x_min, self.x_max),
            p.y.clamp(self.y_min, self.y_max),
            p.z.clamp(self.z_min, self.z_max),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub range: SceneRange,
    pub object_count: usize,
    pub dims_mean: Dims,
    pub dims_std: Dims,
    pub points_per_object_at_10m: usize,
    pub density_exponent: f64,
    pub noise_sigma: f64,
    pub clutter_fraction: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            range: SceneRange::default(),
            object_count: 8,
            dims_mean: Dims::new(3.9, 1.6, 1.56),
            dims_std: Dims::new(0.3, 0.1, 0.1),
            points_per_object_at_10m: 400,
            density_exponent: 1.0,
            noise_sigma: 0.02,
            clutter_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Noiseless, clutter-free scenes with the same point budget at every distance.
    pub fn dense(points_per_object: usize, seed: u64) -> Self {
        Self {
            points_per_object_at_10m: points_per_object,
            density_exponent: 0.0,
            noise_sigma: 0.0,
            clutter_fraction: 0.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let r = &self.range;
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        let vals = [r.x_min, r.x_max, r.y_min, r.y_max, r.z_min, r.z_max];
        if vals.iter().any(|v| !v.is_finite()) || !(r.x_min < r.x_max && r.y_min < r.y_max && r.z_min < r.z_max) {
            return bad("range must be finite and nonempty on every axis");
        }
        let d = self.dims_mean;
        if !(d.l > 0.0 && d.w > 0.0 && d.h > 0.0) {
            return bad("dims_mean must be positive");
        }
        let s = self.dims_std;
        if !(s.l >= 0.0 && s.w >= 0.0 && s.h >= 0.0) {
            return bad("dims_std must be nonnegative");
        }
        if !(self.density_exponent >= 0.0 && self.density_exponent.is_finite()) {
            return bad("density_exponent must be >= 0");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be >= 0");
        }
        if !(0.0..1.0).contains(&self.clutter_fraction) {
            return bad("clutter_fraction must be in [0, 1)");
        }
        if d.h > r.z_max - r.z_min {
            return bad("mean object height exceeds the z range");
        }
        Ok(())
    }

    /// Number of surface points generated for an object whose center is `distance` away.
    pub fn points_for_distance(&self, distance: f64) -> usize {
        let d = distance.max(MIN_DENSITY_DISTANCE);
        let n = self.points_per_object_at_10m as f64 * (10.0 / d).powf(self.density_exponent);
        (n.round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    #[serde(rename = "box")]
    pub bbox: OrientedBox3,
    pub label: String,
}

/// Ground truth plus cloud. Object returns come first, grouped by box in box
/// order; clutter points follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub boxes: Vec<LabeledBox>,
    pub cloud: PointCloud,
    pub config: SceneConfig,
}

impl Scene {
    pub fn gt_boxes(&self) -> Vec<OrientedBox3> {
        self.boxes.iter().map(|b| b.bbox).collect()
    }

    /// Indices of cloud points inside the given box.
    pub fn inside_indices(&self, box_index: usize) -> Result<Vec<usize>, SceneError> {
        let b = self
            .boxes
            .get(box_index)
            .ok_or(SceneError::IndexOutOfRange { index: box_index, len: self.boxes.len() })?;
        Ok((0..self.cloud.len()).filter(|&i| point_in_box(self.cloud.points[i], &b.bbox)).collect())
    }
}

struct Face {
    // local axis fixed by the face and its sign
    axis: usize,
    sign: f64,
    area: f64,
}

fn visible_faces(b: &OrientedBox3) -> Vec<Face> {
    let half = [0.5 * b.dims.l, 0.5 * b.dims.w, 0.5 * b.dims.h];
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let mut n = [0.0; 3];
            n[axis] = sign;
            let normal = Point3::from(n).rotate_z(b.yaw);
            let mut c = [0.0; 3];
            c[axis] = sign * half[axis];
            let face_center = from_box_frame(Point3::from(c), b);
            if normal.dot(face_center - Point3::ORIGIN) < 0.0 {
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                faces.push(Face { axis, sign, area: 4.0 * half[u] * half[v] });
            }
        }
    }
    faces
}

fn sample_dims<R: Rng>(cfg: &SceneConfig, rng: &mut R) -> Dims {
    let mut draw = |m: f64, s: f64| {
        let z: f64 = StandardNormal.sample(rng);
        (m + s * z).max(MIN_OBJECT_DIM)
    };
    let l = draw(cfg.dims_mean.l, cfg.dims_std.l);
    let w = draw(cfg.dims_mean.w, cfg.dims_std.w);
    let h = draw(cfg.dims_mean.h, cfg.dims_std.h);
    Dims::new(l, w, h)
}

fn place_object<R: Rng>(cfg: &SceneConfig, placed: &[OrientedBox3], object: usize, rng: &mut R) -> Result<OrientedBox3, SceneError> {
    let r = &cfg.range;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let dims = sample_dims(cfg, rng);
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        if dims.h > r.z_max - r.z_min {
            continue;
        }
        let probe = OrientedBox3::new(Point3::ORIGIN, dims, yaw).expect("sampled dims are positive");
        let (ex, ey) = probe.bev_half_extents();
        if r.x_max - r.x_min <= 2.0 * ex || r.y_max - r.y_min <= 2.0 * ey {
            continue;
        }
        let x = rng.random_range(r.x_min + ex..r.x_max - ex);
        let y = rng.random_range(r.y_min + ey..r.y_max - ey);
        let candidate = OrientedBox3 { center: Point3::new(x, y, r.z_min + 0.5 * dims.h), ..probe };
        // keep the sensor outside every object
        let sensor_inside = point_in_box(Point3::new(0.0, 0.0, candidate.center.z), &candidate);
        if !sensor_inside && placed.iter().all(|p| iou_bev(p, &candidate) == 0.0) {
            return Ok(candidate);
        }
    }
    Err(SceneError::PlacementFailure { object, attempts: MAX_PLACEMENT_ATTEMPTS })
}

fn sample_surface<R: Rng>(b: &OrientedBox3, n: usize, cfg: &SceneConfig, rng: &mut R, cloud: &mut PointCloud) {
    let faces = visible_faces(b);
    let half = [0.5 * b.dims.l, 0.5 * b.dims.w, 0.5 * b.dims.h];
    let total: f64 = faces.iter().map(|f| f.area).sum();
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("sigma is finite"));
    for _ in 0..n {
        let mut pick = rng.random::<f64>() * total;
        let mut face = &faces[faces.len() - 1];
        for f in &faces {
            if pick < f.area {
                face = f;
                break;
            }
            pick -= f.area;
        }
        let mut local = [0.0; 3];
        local[face.axis] = face.sign * half[face.axis];
        for k in [(face.axis + 1) % 3, (face.axis + 2) % 3] {
            local[k] = rng.random_range(-half[k]..=half[k]);
        }
        let mut p = from_box_frame(Point3::from(local), b);
        if let Some(noise) = &noise {
            p += Point3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
        }
        cloud.push(cfg.range.clamp(p), rng.random::<f64>());
    }
}

/// Builds a scene as a pure function of `config` (seed included).
pub fn generate_scene(config: &SceneConfig) -> Result<Scene, SceneError> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let mut placed = Vec::with_capacity(config.object_count);
    for i in 0..config.object_count {
        let b = place_object(config, &placed, i, &mut rng)?;
        placed.push(b);
    }

    let mut cloud = PointCloud::default();
    for b in &placed {
        let n = config.points_for_distance(b.center.norm());
        sample_surface(b, n, config, &mut rng, &mut cloud);
    }

    let f = config.clutter_fraction;
    let n_clutter = (cloud.len() as f64 * f / (1.0 - f)).round() as usize;
    let r = config.range;
    for _ in 0..n_clutter {
        let p = Point3::new(
            rng.random_range(r.x_min..=r.x_max),
            rng.random_range(r.y_min..=r.y_max),
            rng.random_range(r.z_min..=r.z_max),
        );
        cloud.push(p, rng.random::<f64>());
    }

    Ok(Scene {
        boxes: placed.into_iter().map(|bbox| LabeledBox { bbox, label: "Car".to_string() }).collect(),
        cloud,
        config: config.clone(),
    })
}

/// Removes `⌊fraction · n⌋` of the `n` points inside the indexed box, chosen uniformly.
pub fn mask_inside_points(scene: &Scene, box_index: usize, fraction: f64, seed: u64) -> Result<Scene, SceneError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(SceneError::InvalidFraction(fraction));
    }
    let inside = scene.inside_indices(box_index)?;
    let n_remove = (fraction * inside.len() as f64).floor() as usize;
    let mut rng = rng_from_seed(seed);
    let mut drop = vec![false; scene.cloud.len()];
    for k in sample_indices(&mut rng, inside.len(), n_remove) {
        drop[inside[k]] = true;
    }
    Ok(Scene { cloud: scene.cloud.retain_indices(|i| !drop[i]), ..scene.clone() })
}

/// Shifts the center by independent `Uniform[-d, d]` offsets per axis.
pub fn perturb_box_center(b: &OrientedBox3, max_shift: [f64; 3], seed: u64) -> OrientedBox3 {
    let mut rng = rng_from_seed(seed);
    let mut off = [0.0; 3];
    for k in 0..3 {
        let d = max_shift[k];
        if d > 0.0 {
            off[k] = rng.random_range(-d..=d);
        }
    }
    b.translated(Point3::from(off))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou_3d, nearest_face_distance};

    #[test]
    fn empty_scene() {
        let cfg = SceneConfig { object_count: 0, clutter_fraction: 0.0, ..SceneConfig::default() };
        let s = generate_scene(&cfg).unwrap();
        assert!(s.boxes.is_empty());
        assert!(s.cloud.is_empty());
    }

    #[test]
    fn deterministic() {
        let cfg = SceneConfig { seed: 42, ..SceneConfig::default() };
        let a = generate_scene(&cfg).unwrap();
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&SceneConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_points_on_surfaces() {
        for seed in 0..5 {
            let s = generate_scene(&SceneConfig::dense(200, seed)).unwrap();
            assert_eq!(s.cloud.len(), 200 * s.boxes.len());
            for (i, p) in s.cloud.points.iter().enumerate() {
                let owner = &s.boxes[i / 200].bbox;
                assert!(point_in_box(*p, owner));
                assert!(nearest_face_distance(*p, owner).unwrap() <= 1e-9);
                assert!(s.config.range.contains(*p));
            }
        }
    }

    #[test]
    fn boxes_do_not_overlap_and_rest_on_ground() {
        let s = generate_scene(&SceneConfig { object_count: 20, seed: 9, ..SceneConfig::default() }).unwrap();
        for (i, a) in s.boxes.iter().enumerate() {
            assert!((a.bbox.z_min() - s.config.range.z_min).abs() < 1e-12);
            for b in &s.boxes[i + 1..] {
                assert_eq!(iou_bev(&a.bbox, &b.bbox), 0.0);
            }
        }
    }

    #[test]
    fn placement_failure_is_reported() {
        let cfg = SceneConfig {
            range: SceneRange { x_min: 0.0, x_max: 6.0, y_min: 0.0, y_max: 6.0, z_min: -3.0, z_max: 1.0 },
            object_count: 50,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&cfg), Err(SceneError::PlacementFailure { .. })));
    }

    #[test]
    fn config_validation() {
        let bad = SceneConfig { clutter_fraction: 1.0, ..SceneConfig::default() };
        assert!(matches!(generate_scene(&bad), Err(SceneError::InvalidConfig(_))));
        let bad = SceneConfig { noise_sigma: -1.0, ..SceneConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn clutter_share() {
        let cfg = SceneConfig { clutter_fraction: 0.25, noise_sigma: 0.0, seed: 3, ..SceneConfig::default() };
        let s = generate_scene(&cfg).unwrap();
        let n_obj: usize = s.boxes.iter().map(|b| cfg.points_for_distance(b.bbox.center.norm())).sum();
        let n_clutter = s.cloud.len() - n_obj;
        assert_eq!(n_clutter, (n_obj as f64 / 3.0).round() as usize);
    }

    #[test]
    fn masking_counts() {
        let cfg = SceneConfig { object_count: 1, ..SceneConfig::dense(100, 5) };
        let s = generate_scene(&cfg).unwrap();
        assert_eq!(s.inside_indices(0).unwrap().len(), 100);
        assert_eq!(mask_inside_points(&s, 0, 0.0, 1).unwrap(), s);
        assert_eq!(mask_inside_points(&s, 0, 0.4, 1).unwrap().inside_indices(0).unwrap().len(), 60);
        assert!(mask_inside_points(&s, 0, 1.0, 1).unwrap().inside_indices(0).unwrap().is_empty());
        assert!(matches!(mask_inside_points(&s, 3, 0.5, 1), Err(SceneError::IndexOutOfRange { .. })));
    }

    #[test]
    fn masking_leaves_other_points() {
        let s = generate_scene(&SceneConfig { seed: 11, ..SceneConfig::default() }).unwrap();
        let masked = mask_inside_points(&s, 0, 0.5, 2).unwrap();
        let inside0 = s.inside_indices(0).unwrap();
        let outside: Vec<_> = (0..s.cloud.len()).filter(|i| !inside0.contains(i)).map(|i| s.cloud.points[i]).collect();
        let kept: Vec<_> = masked.cloud.points.iter().filter(|p| !point_in_box(**p, &s.boxes[0].bbox)).copied().collect();
        assert_eq!(outside, kept);
    }

    #[test]
    fn perturbation_bounds() {
        let b = OrientedBox3::new(Point3::new(10.0, 2.0, -2.2), Dims::new(3.9, 1.6, 1.56), 0.3).unwrap();
        assert_eq!(perturb_box_center(&b, [0.0; 3], 1), b);
        for seed in 0..200 {
            let p = perturb_box_center(&b, [0.1, 0.2, 0.3], seed);
            let d = p.center - b.center;
            assert!(d.x.abs() <= 0.1 && d.y.abs() <= 0.2 && d.z.abs() <= 0.3);
            assert_eq!((p.dims, p.yaw), (b.dims, b.yaw));
            if d.norm() > 0.0 {
                assert!(iou_3d(&b, &p) < 1.0);
            }
        }
    }

    #[test]
    fn density_falls_with_distance() {
        // mean returns per object in near vs far bands over 100 scenes
        let (mut near, mut far) = ((0usize, 0usize), (0usize, 0usize));
        for seed in 0..100 {
            let cfg = SceneConfig { density_exponent: 1.5, clutter_fraction: 0.0, seed, ..SceneConfig::default() };
            let s = generate_scene(&cfg).unwrap();
            for (i, b) in s.boxes.iter().enumerate() {
                let n = s.inside_indices(i).unwrap().len();
                let d = b.bbox.center.norm();
                if d < 25.0 {
                    near = (near.0 + n, near.1 + 1);
                } else if d > 40.0 {
                    far = (far.0 + n, far.1 + 1);
                }
            }
        }
        let mean = |(s, c): (usize, usize)| s as f64 / c as f64;
        assert!(mean(near) > mean(far), "near {} far {}", mean(near), mean(far));
    }
}
