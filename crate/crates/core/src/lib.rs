//! The multi-view model: an autoregressive understanding transformer, a
//! flow-matching texture module generating RGB views, and a geometry module
//! generating depth and camera poses.

pub mod condition;
pub mod encode;
pub mod flow;
pub mod geometry;
pub mod model;
pub mod sampling;
pub mod texture;
pub mod understanding;

pub use condition::{pointcloud_condition, trajectory_warp_grids, warp_grid, WarpedView};
pub use encode::{decode_depth, decode_rgb, encode_depth, encode_plucker, encode_rgb, PreparedSample};
pub use flow::{euler_step, gaussian, interpolate, precondition, precondition_output, time_grid, FlowBatch, SAMPLER_T_MAX, SIGMA_DATA};
pub use geometry::{geo_loss, GeoForward, GeoInput, GeoLoss, Geometry, POSE_HUBER_DELTA};
pub use model::{LossDraw, LossOptions, LossValues, LossVars, LossWeights, OmniView, GEO_PREFIX, TEX_PREFIX, UND_PREFIX};
pub use sampling::{sample_geometry, sample_views, texture_hidden, understanding_features, GeometryOptions, GeometrySample, ViewRequest};
pub use texture::{frame_causal_mask, tex_loss, PatchHead, TexForward, TexInput, Texture};
pub use understanding::{category_accuracy, exact_match, und_sequence, UndForward, Understanding};

use omniview_geom::GeomError;
use omniview_nn::NnError;
use omniview_worldgen::WorldError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    World(#[from] WorldError),
}

pub type Result<T> = std::result::Result<T, CoreError>;
