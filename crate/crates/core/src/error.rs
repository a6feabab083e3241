use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum XrfmError {
    #[error("matrix is not positive definite (pivot {pivot} <= 0); try a larger ridge")]
    NotPositiveDefinite { pivot: usize },
    #[error("symmetric eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("invalid norm order q = {0}; expected 0 < q <= 2")]
    InvalidNorm(f64),
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),
    #[error("categorical block mismatch: {0}")]
    BlockMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ridge solve failed: {0}")]
    SolveFailed(Box<XrfmError>),
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("leaf {leaf} has {rows} training rows after validation refill; need at least 2")]
    LeafTooSmall { leaf: usize, rows: usize },
    #[error("query schema does not match training schema: {0}")]
    SchemaMismatch(String),
    #[error("target column `{0}` not found")]
    MissingTarget(String),
    #[error("file is empty")]
    EmptyFile,
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },
    #[error("split fractions {0:?} are invalid (must be non-negative and sum to at most 1)")]
    FractionOverflow(Vec<f64>),
    #[error("target has zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid hyperparameter `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, XrfmError>;

impl From<std::io::Error> for XrfmError {
    fn from(e: std::io::Error) -> Self {
        XrfmError::Io(e.to_string())
    }
}

impl From<csv::Error> for XrfmError {
    fn from(e: csv::Error) -> Self {
        XrfmError::Csv(e.to_string())
    }
}
