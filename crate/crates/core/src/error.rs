use thiserror::Error;

/// Errors raised by the numerical core, the trainer and the benchmark harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has zero norm")]
    ZeroVector,

    #[error("dimension {0} is too small (need at least 2)")]
    DimensionTooSmall(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("polar chart is singular at this point")]
    SingularChart,

    #[error("vector is not unit length (norm = {0})")]
    NotUnit(f64),

    #[error("series did not converge: {0}")]
    NotConverged(String),

    #[error("rate parameter must be positive, got {0}")]
    NonPositiveRate(f64),

    #[error("unknown domain index {0}")]
    UnknownDomainIndex(usize),

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndexOutOfRange { index: usize, classes: usize },

    #[error("domain {0} has no samples")]
    EmptyDomain(usize),

    #[error("batch is empty")]
    EmptyBatch,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("vector is not on the probability simplex (sum = {0})")]
    NotSimplex(f64),

    #[error("center repulsion did not reach the separation threshold after {0} iterations")]
    RepulsionFailed(usize),

    #[error("radius {radius} outside target support [{lower}, {upper}]")]
    OutsideSupport { radius: f64, lower: f64, upper: f64 },

    #[error("non-finite gradient at step {step}: {detail}")]
    NonFiniteGradient { step: u64, detail: String },

    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
