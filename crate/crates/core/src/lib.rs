//! LiDAR point cloud tooling for image-to-point distillation: voxel
//! quantization analysis, point-to-pixel matching, positive pair mining across
//! unsynced sweeps and the contrastive distillation loss.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod error;
pub mod flow;
pub mod geom;
pub mod io;
pub mod loss;
pub mod matcher;
pub mod ppm;
pub mod quantizer;
pub mod synth;

mod spatial;

pub use error::{Error, Result};
pub use geom::{CameraModel, Frame, FrameSequence, Point3, PointCloud, RigidTransform};
