use thiserror::Error;

/// Errors produced by the filtering library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("all points are identical; no pairwise distance to take a median of")]
    DegeneratePoints,

    #[error("kernel means use different kernels")]
    KernelMismatch,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("linear solve failed in {stage} (condition estimate {condition:.3e})")]
    SolverBreakdown { stage: &'static str, condition: f64 },

    #[error("matrix is not positive semi-definite: pivot {pivot:.3e} at index {index}")]
    NotPositiveDefinite { pivot: f64, index: usize },

    #[error("posterior weights sum to zero; try a larger delta regularizer")]
    ZeroWeightSum,

    #[error("filter failed at step {step}: {source}")]
    FilterStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
