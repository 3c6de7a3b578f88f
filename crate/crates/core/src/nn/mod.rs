//! A small differentiable tensor engine covering exactly the layers the detection
//! networks use: dilated SAME convolution, batch normalisation, ReLU, residual
//! addition, channel concatenation, max pooling, linear layers and log-softmax.
//!
//! Forward evaluation records a [`Tape`]; [`Tape::backward`] replays it in reverse
//! to produce vector-Jacobian products for every parameter leaf.

mod gradcheck;
pub mod kernels;
mod layer;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, tape_grad_check, GradCheckReport, FD_STEP};
pub use layer::{LayerKind, LayerParams, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use tape::{Gradients, NormMode, Tape, Var};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite values produced by {0}")]
    NonFinite(&'static str),
    #[error("variable {0} is not on this tape")]
    UnknownVar(usize),
    #[error("backward called before any forward pass reached the seed")]
    BackwardBeforeForward,
    #[error("backward seed must be a scalar, got shape {0:?}")]
    NonScalarSeed(Vec<usize>),
    #[error("batch norm layer `{0}` has no running statistics")]
    MissingRunningStats(String),
}
