//! Procedural multiview data: closed box rooms with colored cuboids, a
//! ray-cast renderer producing RGB and z-depth, camera trajectories,
//! templated spatial questions with exact answers, and the `OMVW` dataset
//! file format.

mod dataset;
mod qa;
mod render;
mod sample;
mod scene;
mod trajectory;
pub mod vocab;

pub use dataset::{read_dataset, read_dataset_bytes, write_dataset, write_dataset_bytes, FormatError, DATASET_MAGIC, DATASET_VERSION};
pub use qa::{caption_tokens, first_visible_frames, make_qa, QaCategory, QaPair};
pub use render::{ray_aabb, render_view, RenderedView};
pub use sample::{generate_dataset, generate_sample, sample_seed, MultiviewSample, SampleSpec};
pub use scene::{sample_scene, Aabb, Color, Scene, SceneObject, Shape, MAX_OBJECTS, MIN_OBJECTS};
pub use trajectory::sample_trajectory;
pub use vocab::{Token, Vocabulary};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("question template unsatisfiable: {0}")]
    Unsatisfiable(String),
    #[error(transparent)]
    Geom(#[from] omniview_geom::GeomError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WorldError>;
