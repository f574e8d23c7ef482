use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{normalize_yaw, Dims, GeometryError, OrientedBox3, Point3};

pub const KITTI_FIELDS: usize = 15;

/// One object line of a KITTI label file, in camera coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// left, top, right, bottom (pixels)
    pub bbox2d: [f64; 4],
    /// height, width, length (meters)
    pub dims_hwl: [f64; 3],
    /// bottom-center in camera coordinates (meters)
    pub location: [f64; 3],
    pub rotation_y: f64,
}

impl KittiLabel {
    pub fn is_dont_care(&self) -> bool {
        self.kind == "DontCare"
    }
}

/// Splits a line into fields with their 1-based starting columns.
fn fields_with_columns(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s, &line[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out.into_iter().map(|(byte, f)| (line[..byte].chars().count() + 1, f)).collect()
}

/// Strict parser: exactly 15 fields per non-blank line, finite numbers.
pub fn parse_kitti_labels(text: &str) -> Result<Vec<KittiLabel>, IoError> {
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields = fields_with_columns(line);
        if fields.is_empty() {
            continue;
        }
        if fields.len() != KITTI_FIELDS {
            let column = fields.get(KITTI_FIELDS).map_or(line.chars().count() + 1, |f| f.0);
            return Err(IoError::Parse {
                line: line_no,
                column,
                reason: format!("expected {KITTI_FIELDS} fields, found {}", fields.len()),
            });
        }
        let num = |k: usize, name: &str| -> Result<f64, IoError> {
            let (column, raw) = fields[k];
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(IoError::Parse { line: line_no, column, reason: format!("field {} ({name}) '{raw}' is not a finite number", k + 1) }),
            }
        };
        let (occ_col, occ_raw) = fields[2];
        let occluded = occ_raw.parse::<i32>().map_err(|_| IoError::Parse {
            line: line_no,
            column: occ_col,
            reason: format!("field 3 (occluded) '{occ_raw}' is not an integer"),
        })?;
        labels.push(KittiLabel {
            kind: fields[0].1.to_string(),
            truncated: num(1, "truncated")?,
            occluded,
            alpha: num(3, "alpha")?,
            bbox2d: [num(4, "left")?, num(5, "top")?, num(6, "right")?, num(7, "bottom")?],
            dims_hwl: [num(8, "height")?, num(9, "width")?, num(10, "length")?],
            location: [num(11, "x")?, num(12, "y")?, num(13, "z")?],
            rotation_y: num(14, "rotation_y")?,
        });
    }
    Ok(labels)
}

/// One line per label, single-space separated, numbers in shortest round-trip form.
pub fn write_kitti_labels(labels: &[KittiLabel]) -> String {
    let mut s = String::new();
    for l in labels {
        let _ = write!(s, "{} {:?} {} {:?}", l.kind, l.truncated, l.occluded, l.alpha);
        for v in l.bbox2d.iter().chain(&l.dims_hwl).chain(&l.location) {
            let _ = write!(s, " {v:?}");
        }
        let _ = writeln!(s, " {:?}", l.rotation_y);
    }
    s
}

/// Canonical form of a label file: parse, then write.
pub fn normalize_kitti(text: &str) -> Result<String, IoError> {
    parse_kitti_labels(text).map(|l| write_kitti_labels(&l))
}

/// Approximate LiDAR-frame box using the nominal axis permutation
/// (`x = z_cam`, `y = −x_cam`, `z = −y_cam`) with no calibration offsets.
/// The camera location is the bottom-face center, so `z` is raised by `h/2`.
pub fn label_to_lidar_box(label: &KittiLabel) -> Result<OrientedBox3, GeometryError> {
    let [h, w, l] = label.dims_hwl;
    let [x, y, z] = label.location;
    OrientedBox3::new(Point3::new(z, -x, -y + 0.5 * h), Dims::new(l, w, h), -label.rotation_y - FRAC_PI_2)
}

/// Inverse of [`label_to_lidar_box`]; 2D box, truncation, occlusion and alpha are left at 0.
pub fn lidar_box_to_label(b: &OrientedBox3, kind: &str) -> KittiLabel {
    let mut ry = normalize_yaw(-b.yaw - FRAC_PI_2);
    if ry > std::f64::consts::PI {
        ry -= std::f64::consts::TAU;
    }
    KittiLabel {
        kind: kind.to_string(),
        truncated: 0.0,
        occluded: 0,
        alpha: 0.0,
        bbox2d: [0.0; 4],
        dims_hwl: [b.dims.h, b.dims.w, b.dims.l],
        location: [-b.center.y, -(b.center.z - 0.5 * b.dims.h), b.center.x],
        rotation_y: ry,
    }
}
