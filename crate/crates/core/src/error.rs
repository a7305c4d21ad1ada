use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("solver diverged at step {step} (dtau = {dtau:e}): {reason}")]
    SolverDivergence { step: usize, dtau: f64, reason: String },

    #[error("degenerate system: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDivergence { epoch: usize },

    #[error("no junction narrowing found; pass explicit junction bounds")]
    NoJunction,

    #[error("artifact {path} failed its integrity check: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used by the command line JSON errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Invalid(_) => "invalid",
            Error::Calibration(_) => "calibration",
            Error::SolverDivergence { .. } => "solver-divergence",
            Error::Degenerate(_) => "degenerate",
            Error::TrainingDivergence { .. } => "training-divergence",
            Error::NoJunction => "no-junction",
            Error::Integrity { .. } => "integrity",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
