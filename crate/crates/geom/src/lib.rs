//! Geometric substrate shared by the world generator, the models and the trainer.
//!
//! Conventions used throughout:
//!
//! * world frame is right-handed with +y up;
//! * camera frame is x right, y down, z forward (optical axis);
//! * a [`Camera`] stores the camera-to-world rotation as a unit quaternion
//!   `(w, x, y, z)`, the camera center in world units, and a focal length
//!   normalized by image width/height. The principal point is the image center;
//! * depth is z-depth along the optical axis, not ray length;
//! * pixel `(i, j)` is row `i`, column `j`; its center sits at normalized image
//!   coordinates `((j + 0.5) / W, (i + 0.5) / H)`.

mod camera;
mod loss;
mod plucker;
mod warp;

pub mod vec3;

pub use camera::{Camera, PoseVector, POSE_DIM};
pub use loss::{huber, huber_residual, pose_error, PoseError, DEFAULT_HUBER_DELTA};
pub use plucker::{plucker_map, PluckerMap};
pub use warp::{rasterize, reproject, unproject, PointCloud, Projection, Raster, MIN_VALID_Z};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;
