//! File formats: scene JSON, KITTI object labels and KITTI velodyne point clouds.
//!
//! Every reader is total: malformed input comes back as a structured error.

mod kitti;
mod pointcloud;
mod scene_json;

use thiserror::Error;

pub use kitti::{
    label_to_lidar_box, lidar_box_to_label, normalize_kitti, parse_kitti_labels, write_kitti_labels, KittiLabel, KITTI_FIELDS,
};
pub use pointcloud::{read_pointcloud_bin, write_pointcloud_bin, BYTES_PER_POINT};
pub use scene_json::{read_scene_json, write_scene_json, SCENE_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    /// 1-based line and character column.
    #[error("line {line}, column {column}: {reason}")]
    Parse { line: usize, column: usize, reason: String },
    #[error("point cloud file of {len} bytes is not a multiple of {}", BYTES_PER_POINT)]
    TruncatedFile { len: usize },
    /// `path` uses `field[index].field` notation, e.g. `boxes[2].yaw`.
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
}
