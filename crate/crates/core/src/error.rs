//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("negative total variance {value} at index {index}")]
    NegativeVariance { index: usize, value: f64 },

    #[error("grid mismatch: expected dimension {expected}, got {actual}")]
    GridMismatch { expected: usize, actual: usize },

    #[error("invalid box bounds: w_min={w_min}, w_max={w_max}")]
    InvalidBounds { w_min: f64, w_max: f64 },

    #[error("projection did not converge after {iterations} iterations (kkt residual {residual:e})")]
    MaxIterationsExceeded { iterations: usize, residual: f64 },

    #[error("projection failed at step {step}: {reason}")]
    ProjectionFailure { step: usize, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("world model training degenerate: val_mse {val_mse:e} >= persistence_mse {persistence_mse:e}")]
    TrainingDegenerate { val_mse: f64, persistence_mse: f64 },

    #[error("window length mismatch: expected {expected}, got {actual}")]
    WindowLengthMismatch { expected: usize, actual: usize },

    #[error("action {value} at coordinate {index} outside [-{a_max}, {a_max}]")]
    ActionOutOfBounds { index: usize, value: f64, a_max: f64 },

    #[error("non-finite loss detected at update {update}")]
    DivergenceDetected { update: usize },

    #[error("no checkpoints to select from")]
    NoCheckpoints,

    #[error("inconsistent penalty kinds across metric reports")]
    InconsistentPenaltyKind,

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("malformed file {}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::NegativeVariance { .. } => "NegativeVariance",
            Error::GridMismatch { .. } => "GridMismatch",
            Error::InvalidBounds { .. } => "InvalidBounds",
            Error::MaxIterationsExceeded { .. } => "MaxIterationsExceeded",
            Error::ProjectionFailure { .. } => "ProjectionFailure",
            Error::EmptyInput(_) => "EmptyInput",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::InsufficientData(_) => "InsufficientData",
            Error::TrainingDegenerate { .. } => "TrainingDegenerate",
            Error::WindowLengthMismatch { .. } => "WindowLengthMismatch",
            Error::ActionOutOfBounds { .. } => "ActionOutOfBounds",
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::NoCheckpoints => "NoCheckpoints",
            Error::InconsistentPenaltyKind => "InconsistentPenaltyKind",
            Error::MissingArtifact(_) => "MissingArtifact",
            Error::ConfigParse(_) => "ConfigParse",
            Error::SchemaVersion { .. } => "SchemaVersion",
            Error::Malformed { .. } => "Malformed",
            Error::Io { .. } => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}
