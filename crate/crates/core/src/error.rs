//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is structurally invalid (zero layer size,
    /// non-complementary adjacency, bad split ratio, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Vector or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument is outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model was queried before it was fitted.
    #[error("not fitted: {0}")]
    NotFitted(String),

    /// Too few samples to fit an estimator.
    #[error("not enough data: {0}")]
    NotEnoughData(String),

    /// A state-dependent component was used without a state (or vice versa).
    #[error("usage error: {0}")]
    Usage(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged in {stage}: {detail}")]
    TrainingDiverged { stage: String, detail: String },

    /// An environment rollout produced a non-finite state.
    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized artifact could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of numerics (as opposed to bad inputs); the CLI
    /// maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::TrainingDiverged { .. } | Error::RolloutDiverged { .. }
        )
    }
}
