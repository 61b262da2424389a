use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("empty evaluation set")]
    EmptyEvaluationSet,

    #[error("empty local dataset")]
    EmptyLocalDataset,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("label {label} out of range for {class_count} classes")]
    LabelOutOfRange { label: usize, class_count: usize },

    #[error("insufficient examples of class {class}: needed {needed}, {available} left")]
    InsufficientExamples {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("invalid sampling distribution: {0}")]
    InvalidDistribution(String),

    #[error("upsampling factor too large: k_S * lambda = {product} must be < n = {n}")]
    UpsamplingFactorTooLarge { product: f64, n: usize },

    #[error("observation does not match mode {mode}: {reason}")]
    ObservationMismatch { mode: &'static str, reason: String },

    #[error("precision target {alpha} requires k/alpha <= n (k = {k}, n = {n})")]
    PrecisionOutOfRange { alpha: f64, k: usize, n: usize },

    #[error("flip_to must differ from the target class ({0})")]
    FlipToTargetClass(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("malformed IDX file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration rather than by
    /// the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
