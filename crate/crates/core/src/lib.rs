//! Implicit-field 3D box detection at desk scale.
//!
//! The pipeline classifies points around candidate object centers as inside or
//! outside an object, then fits oriented boxes to the inside points instead of
//! regressing box parameters directly:
//!
//! 1. [`scenegen`] produces synthetic LiDAR-like scenes with ground-truth boxes.
//! 2. [`candidates`] proposes object centers from a bird's-eye-view seed grid.
//! 3. [`implicit`] samples raw and virtual points around each candidate and assigns
//!    each one an inside probability with kernels generated from the candidate.
//! 4. [`boundary`] fits a minimum oriented box to the inside points.
//! 5. [`refine`] pools implicit-weighted features inside each box for a confidence
//!    score and a small correction.
//!
//! [`train`] holds the losses and hand-written gradients, [`eval`] the metrics and
//! robustness experiments, and [`io`] the file formats.

pub mod boundary;
pub mod candidates;
pub mod eval;
pub mod geometry;
pub mod implicit;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod scenegen;
pub mod train;

pub use geometry::{Dims, OrientedBox3, Point3, PointCloud};
