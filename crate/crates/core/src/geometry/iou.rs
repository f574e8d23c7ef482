use super::{clip_convex, polygon_area, OrientedBox3};

/// Areas below this are treated as an empty intersection (touching or collinear edges).
const MIN_AREA: f64 = 1e-12;

/// Footprint overlap of two boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevIntersection {
    pub area: f64,
    pub area_a: f64,
    pub area_b: f64,
}

impl BevIntersection {
    pub fn between(a: &OrientedBox3, b: &OrientedBox3) -> Self {
        let area_a = a.dims.l * a.dims.w;
        let area_b = b.dims.l * b.dims.w;
        let pa = a.bev_corners();
        let pb = b.bev_corners();
        // cheap reject on bounding circles
        let (dx, dy) = (a.center.x - b.center.x, a.center.y - b.center.y);
        let ra = 0.5 * a.dims.l.hypot(a.dims.w);
        let rb = 0.5 * b.dims.l.hypot(b.dims.w);
        let area = if dx * dx + dy * dy > (ra + rb) * (ra + rb) {
            0.0
        } else {
            let inter = polygon_area(&clip_convex(&pa, &pb));
            if inter < MIN_AREA {
                0.0
            } else {
                inter.min(area_a).min(area_b)
            }
        };
        Self { area, area_a, area_b }
    }
}

/// Rotated-rectangle IoU of the two footprints.
pub fn iou_bev(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    let i = BevIntersection::between(a, b);
    if i.area == 0.0 {
        return 0.0;
    }
    (i.area / (i.area_a + i.area_b - i.area)).clamp(0.0, 1.0)
}

/// Volumetric IoU of two gravity-aligned boxes: footprint overlap times height overlap.
pub fn iou_3d(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    let dz = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if dz <= 0.0 {
        return 0.0;
    }
    let i = BevIntersection::between(a, b);
    if i.area == 0.0 {
        return 0.0;
    }
    let inter = i.area * dz;
    (inter / (a.volume() + b.volume() - inter)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Dims, Point3};

    fn bx(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, yaw: f64) -> OrientedBox3 {
        OrientedBox3::new(Point3::new(x, y, z), Dims::new(l, w, h), yaw).unwrap()
    }

    #[test]
    fn identical_boxes() {
        let a = bx(1.0, 2.0, 0.0, 3.9, 1.6, 1.5, 0.8);
        assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_unit_squares() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert!((iou_bev(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_in_plane_or_height() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert_eq!(iou_3d(&a, &bx(3.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.3)), 0.0);
        assert_eq!(iou_3d(&a, &bx(0.0, 0.0, 2.0, 1.0, 1.0, 1.0, 0.0)), 0.0);
        // touching faces count as empty
        assert_eq!(iou_bev(&a, &bx(1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0)), 0.0);
    }

    #[test]
    fn symmetric_for_rotated_pair() {
        let a = bx(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.3);
        let b = bx(0.7, 0.4, 0.2, 3.5, 1.8, 1.4, 1.2);
        assert!((iou_3d(&a, &b) - iou_3d(&b, &a)).abs() < 1e-12);
        assert!((iou_bev(&a, &b) - iou_bev(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn square_rotated_45_in_itself() {
        // a square rotated by 45° about a shared center: octagon overlap
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, std::f64::consts::FRAC_PI_4);
        let oct = 8.0 * (2f64.sqrt() - 1.0);
        assert!((iou_bev(&a, &b) - oct / (8.0 - oct)).abs() < 1e-12);
    }
}
