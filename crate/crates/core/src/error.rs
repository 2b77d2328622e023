use thiserror::Error;

/// Errors raised across the discovery pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("state diverged at time index {index}")]
    Divergence { index: usize },

    #[error("RK4 stage k{stage} is non-finite (row {row})")]
    Stage { stage: usize, row: usize },

    #[error("feature {feature} evaluated to a non-finite value")]
    NonFiniteFeature { feature: String },

    #[error("gradient entry {index} is non-finite")]
    NonFiniteGradient { index: usize },

    #[error("optimizer diverged at iteration {iteration} (loss {loss:e})")]
    OptimizerDivergence {
        iteration: usize,
        loss: f64,
        /// Last parameter vector with a finite loss.
        last_finite: Vec<f64>,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
