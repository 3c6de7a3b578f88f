//! Losses, mixup, the Adam optimizer, and the training loop.

mod adam;
mod fit;
mod loss;
mod mixup;

pub use adam::{decay_lr, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use fit::{fit, score_utterances, EpochLog, FitOutcome, LossMode, TrainConfig};
pub use loss::{class_weights, cross_entropy, wce_loss, ClassWeights};
pub use mixup::{mixup_batch, mixup_loss, sample_beta, BETA_CLAMP};

use thiserror::Error;

use crate::audio::AudioError;
use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0}")]
    Data(String),
    #[error("non-finite gradient for `{0}`; step aborted")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
