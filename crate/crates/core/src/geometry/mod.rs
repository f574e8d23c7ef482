//! Gravity-aligned oriented boxes and the point/box primitives everything
//! else is built on.
//!
//! Conventions used throughout the crate:
//!
//! * Positive yaw is a counter-clockwise rotation about `+z` seen from above.
//! * [`to_box_frame`] translates by `-center` and then rotates by `-yaw`, so the
//!   box's length runs along the local `x` axis, width along `y`, height along `z`.
//! * Boxes are closed: a point on a face is inside.

mod iou;
mod oracle;
mod polygon;

use std::f64::consts::TAU;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use iou::{iou_3d, iou_bev, BevIntersection};
pub use oracle::{iou_oracle, OracleEstimate};
pub use polygon::{clip_convex, polygon_area};

/// Smallest extent a fitted box may have along any axis (meters).
pub const EPS_DIM: f64 = 1e-3;

/// Slack applied by membership tests so that points produced by a frame
/// round-trip on a face still test as inside.
pub const CONTAINMENT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point lies outside the box")]
    OutsidePoint,
    #[error("empty point set")]
    EmptyInput,
    #[error("invalid box: {0}")]
    InvalidBox(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Point3) -> f64 {
        (self - o).norm()
    }

    pub fn distance_squared(self, o: Point3) -> f64 {
        let d = self - o;
        d.dot(d)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Rotates about the `z` axis through the origin.
    pub fn rotate_z(self, angle: f64) -> Point3 {
        let (s, c) = angle.sin_cos();
        Point3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    fn add_assign(&mut self, o: Point3) {
        *self = *self + o;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// Box extents: length along the heading, width across it, height along `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub l: f64,
    pub w: f64,
    pub h: f64,
}

impl Dims {
    pub const fn new(l: f64, w: f64, h: f64) -> Self {
        Self { l, w, h }
    }

    pub fn volume(self) -> f64 {
        self.l * self.w * self.h
    }
}

/// Maps any finite angle into `[0, 2π)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let r = yaw.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3 {
    pub center: Point3,
    pub dims: Dims,
    pub yaw: f64,
}

impl OrientedBox3 {
    /// Builds a validated box; yaw is wrapped into `[0, 2π)`.
    pub fn new(center: Point3, dims: Dims, yaw: f64) -> Result<Self, GeometryError> {
        let b = OrientedBox3 {
            center,
            dims,
            yaw: if yaw.is_finite() { normalize_yaw(yaw) } else { yaw },
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.center.is_finite() {
            return Err(GeometryError::InvalidBox("non-finite center".into()));
        }
        let d = self.dims;
        if !(d.l > 0.0 && d.w > 0.0 && d.h > 0.0) || !(d.l.is_finite() && d.w.is_finite() && d.h.is_finite()) {
            return Err(GeometryError::InvalidBox(format!("dims must be positive and finite, got {d:?}")));
        }
        if !(self.yaw.is_finite() && (0.0..TAU).contains(&self.yaw)) {
            return Err(GeometryError::InvalidBox(format!("yaw {} outside [0, 2π)", self.yaw)));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.volume()
    }

    pub fn z_min(&self) -> f64 {
        self.center.z - 0.5 * self.dims.h
    }

    pub fn z_max(&self) -> f64 {
        self.center.z + 0.5 * self.dims.h
    }

    pub fn translated(&self, by: Point3) -> OrientedBox3 {
        OrientedBox3 { center: self.center + by, ..*self }
    }

    /// Footprint corners in counter-clockwise order, starting at local `(-l/2, -w/2)`.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (0.5 * self.dims.l, 0.5 * self.dims.w);
        let (s, c) = self.yaw.sin_cos();
        let local = [[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]];
        local.map(|[x, y]| [self.center.x + c * x - s * y, self.center.y + s * x + c * y])
    }

    /// Half extents of the footprint's axis-aligned bounding rectangle.
    pub fn bev_half_extents(&self) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.dims.l, 0.5 * self.dims.w);
        (hl * c.abs() + hw * s.abs(), hl * s.abs() + hw * c.abs())
    }
}

/// Expresses `p` in the box's local frame.
pub fn to_box_frame(p: Point3, b: &OrientedBox3) -> Point3 {
    (p - b.center).rotate_z(-b.yaw)
}

/// Inverse of [`to_box_frame`].
pub fn from_box_frame(local: Point3, b: &OrientedBox3) -> Point3 {
    local.rotate_z(b.yaw) + b.center
}

/// Closed membership test.
pub fn point_in_box(p: Point3, b: &OrientedBox3) -> bool {
    local_in_box(to_box_frame(p, b), b.dims)
}

pub(crate) fn local_in_box(q: Point3, d: Dims) -> bool {
    q.x.abs() <= 0.5 * d.l + CONTAINMENT_TOL
        && q.y.abs() <= 0.5 * d.w + CONTAINMENT_TOL
        && q.z.abs() <= 0.5 * d.h + CONTAINMENT_TOL
}

/// Corners of the box. The bottom face (`z = -h/2`) comes first, counter-clockwise
/// from local `(-l/2, -w/2)`; the top face follows in the same order.
pub fn box_corners(b: &OrientedBox3) -> [Point3; 8] {
    let (hl, hw, hh) = (0.5 * b.dims.l, 0.5 * b.dims.w, 0.5 * b.dims.h);
    let xy = [[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]];
    std::array::from_fn(|i| {
        let [x, y] = xy[i % 4];
        let z = if i < 4 { -hh } else { hh };
        from_box_frame(Point3::new(x, y, z), b)
    })
}

/// Distance from an inside point to the closest face; zero on the surface.
pub fn nearest_face_distance(p: Point3, b: &OrientedBox3) -> Result<f64, GeometryError> {
    let q = to_box_frame(p, b);
    if !local_in_box(q, b.dims) {
        return Err(GeometryError::OutsidePoint);
    }
    let d = (0.5 * b.dims.l - q.x.abs())
        .min(0.5 * b.dims.w - q.y.abs())
        .min(0.5 * b.dims.h - q.z.abs());
    Ok(d.max(0.0))
}

/// Tightest box with the given yaw that contains every point.
///
/// Extents below [`EPS_DIM`] (collinear or coplanar input) are widened to `EPS_DIM`
/// around the same center.
pub fn min_box_at_yaw(points: &[Point3], yaw: f64) -> Result<OrientedBox3, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let yaw = normalize_yaw(yaw);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        let q = p.rotate_z(-yaw).to_array();
        for k in 0..3 {
            lo[k] = lo[k].min(q[k]);
            hi[k] = hi[k].max(q[k]);
        }
    }
    let mid = Point3::new(0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2]));
    let ext = |k: usize| (hi[k] - lo[k]).max(EPS_DIM);
    OrientedBox3::new(mid.rotate_z(yaw), Dims::new(ext(0), ext(1), ext(2)), yaw)
}

/// Point positions with a per-point reflectance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub intensity: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, intensity: Vec<f64>) -> Result<Self, GeometryError> {
        if points.len() != intensity.len() {
            return Err(GeometryError::InvalidBox(format!(
                "intensity length {} does not match point count {}",
                intensity.len(),
                points.len()
            )));
        }
        Ok(Self { points, intensity })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Point3, intensity: f64) {
        self.points.push(p);
        self.intensity.push(intensity);
    }

    /// Copy keeping only the points whose index satisfies `keep`.
    pub fn retain_indices(&self, mut keep: impl FnMut(usize) -> bool) -> PointCloud {
        let mut out = PointCloud::default();
        for i in 0..self.len() {
            if keep(i) {
                out.push(self.points[i], self.intensity[i]);
            }
        }
        out
    }
}
