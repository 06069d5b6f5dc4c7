//! Differentiable building blocks for the multiview models.
//!
//! Everything is expressed over dense row-major `f64` matrices ([`Mat`]). A
//! [`Graph`] records a tape of coarse-grained ops (fused linear, layer norm,
//! multi-head attention, losses) against a borrowed [`ParamStore`]; calling
//! [`Graph::backward`] yields per-parameter [`Grads`]. Sequences are processed
//! one at a time, so every activation is a `[tokens, width]` matrix.

mod checkpoint;
mod config;
mod graph;
mod layers;
mod mask;
mod optim;
mod params;
mod tensor;

pub mod gradcheck;

pub use checkpoint::{hash_params, read_checkpoint, read_checkpoint_bytes, write_checkpoint, write_checkpoint_bytes, Checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use graph::{Graph, Var};
pub use layers::{patchify, sinusoidal_embedding, unpatchify, Attention, LayerNorm, Linear, Mlp, PatchEmbed, TransformerBlock};
pub use mask::AttentionMask;
pub use optim::{clip_grad_norm, warmup_iters, warmup_lr, AdamW, AdamWConfig};
pub use params::{Grads, Init, Param, ParamId, ParamStore};
pub use tensor::Mat;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape contract violated: {0}")]
    Shape(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("attempted to update frozen parameter {0}")]
    FrozenParameter(String),
    #[error("checkpoint error at byte {offset}: {message}")]
    Checkpoint { offset: u64, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
