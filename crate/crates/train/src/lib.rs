//! Training for the multi-view model: joint stage-1 optimization under a
//! reference-frame curriculum, and stage-2 generation refinement with the
//! understanding model frozen.

pub mod config;
pub mod curriculum;
pub mod run;
pub mod trainer;

pub use config::{Conditioning, StageConfig, TrainConfig};
pub use curriculum::{d2s_refs, CurriculumState, RefSchedule};
pub use run::{checkpoint_hash, load_samples, prepare, read_metrics, run_training, MetricsRow, RunOutcome, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, OPTIMIZER_FILE};
pub use trainer::{StepReport, Trainer, WarpedSample, BATCH_LANE, DRAW_LANE};

use std::path::PathBuf;

use omniview_core::CoreError;
use omniview_nn::NnError;
use omniview_worldgen::WorldError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage: {0}")]
    Stage(String),
    #[error("non-finite loss at iteration {iteration}; step rejected")]
    NonFiniteLoss { iteration: u64 },
    #[error("cannot load {}: {message}", path.display())]
    Load { path: PathBuf, message: String },
    #[error("metrics log: {0}")]
    Metrics(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TrainError {
    /// Errors after which the step is skipped and training continues.
    pub fn is_rejection(&self) -> bool {
        matches!(self, TrainError::NonFiniteLoss { .. } | TrainError::Nn(NnError::NonFiniteGradient(_)))
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
