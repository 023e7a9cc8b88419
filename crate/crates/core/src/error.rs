use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid unfolding mode {0} (expected 1, 2 or 3)")]
    InvalidMode(usize),

    #[error("variable {0} has no observed values")]
    UnusableVariable(usize),

    #[error("variable {0} has a degenerate (constant) support")]
    DegenerateSupport(usize),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("no triple of variables has a jointly observed record")]
    EmptyStatistics,

    #[error("at least 3 variables are required, got {0}")]
    InsufficientVariables(usize),

    #[error("invalid factor column: {0}")]
    InvalidFactor(String),

    #[error("unknown family `{0}`")]
    UnknownFamily(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} complete rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("all cells of the observation are missing")]
    AllMissing,

    #[error("model kind mismatch: expected {expected}, found {found}")]
    ModelKindMismatch { expected: String, found: String },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
