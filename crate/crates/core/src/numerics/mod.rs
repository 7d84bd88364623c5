//! Dense tensors, a reverse-mode tape, the attention-era building blocks
//! the model is assembled from, and a finite-difference gradient checker.

mod gradcheck;
mod layers;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, BlockError, GradCheckReport};
pub use layers::{ffn_relu_residual, multi_head_attention, sinusoidal_pe, AttentionParams, FfnParams};
pub use tape::{Graph, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
