//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance regularization failed: {0}")]
    Regularization(String),

    #[error("insufficient data at step {t}: have {have} samples, need {need}")]
    InsufficientData { t: usize, have: usize, need: usize },

    #[error("cost expansion failed at step {t}: non-finite derivatives")]
    ExpansionFailure { t: usize },

    #[error("backward pass failed at step {t}: action Hessian irrecoverably indefinite")]
    BackwardPassFailure { t: usize },

    #[error("rollout for condition {condition} aborted at step {t}: non-finite state")]
    RolloutAborted { condition: usize, t: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
