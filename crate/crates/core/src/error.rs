use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),

    #[error("value {value} for dimension `{dim}` is outside [{lo}, {hi}]")]
    OutOfBounds {
        dim: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: u64, len: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid simulator configuration: {0}")]
    InvalidSimConfig(String),

    #[error("parameter `{name}` = {value} is invalid: {reason}")]
    InvalidTheta {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("unknown series `{0}`")]
    UnknownSeries(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("matrix not positive definite after jitter up to {max_jitter:e}")]
    Singular { max_jitter: f64 },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("total variance is zero for target `{0}`; implausibility undefined")]
    DegenerateVariance(String),

    #[error("one emulator per target is required: {emulators} emulators for {targets} targets")]
    EmulatorTargetMismatch { emulators: usize, targets: usize },

    #[error("NROY set is empty after wave {wave}: revisit the simulator and the model discrepancy")]
    EmptyNroy { wave: usize },

    #[error("no proposal accepted in chain {chain} after {steps} steps (minimum distance {min_distance}); epsilon {epsilon} is too small")]
    EpsilonTooSmall {
        chain: usize,
        steps: usize,
        min_distance: f64,
        epsilon: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("pipeline order: {stage} requires checkpoint `{missing}`")]
    PipelineOrder { stage: String, missing: String },

    #[error("run store corrupted: {0}")]
    StoreCorrupt(String),

    #[error("archive format error: {0}")]
    Archive(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::Optimizer(_)
                | Error::DegenerateVariance(_)
                | Error::EmptyNroy { .. }
                | Error::EpsilonTooSmall { .. }
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
