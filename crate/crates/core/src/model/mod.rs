//! Market-guided gating, alternating intra-/inter-stock attention and
//! temporal attention pooling.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use forward::{
    forward, forward_graph, gate, inter_aggregate, intra_aggregate, predict, temporal_aggregate, window_inputs,
    ForwardVars, ModelOutput, ParamVars,
};
pub use params::{param_shapes, ModelParams, PARAM_NAMES};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
