use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants fall into two families: data validation (bad files, bad
/// labels, empty groups) and numerical failure (non-finite losses).
/// [`Error::is_numerical`] tells them apart for exit-code mapping.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("header truncated: need {needed} bytes, have {available}")]
    TruncatedHeader { needed: usize, available: usize },

    #[error("dimension must be positive")]
    DimZero,

    #[error("row count mismatch: header declares {declared} rows of dim {dim}, body holds {body_bytes} bytes")]
    RowCountMismatch { declared: u64, dim: u32, body_bytes: usize },

    #[error("row {row} contains a non-finite value")]
    NonFiniteVector { row: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("attribute {attribute:?} on row {row}: label {value} is not -1 or 1")]
    BadLabelValue { row: usize, attribute: String, value: String },

    #[error("metadata line {line}: {message}")]
    BadMetadata { line: usize, message: String },

    #[error("metadata references row {row} but the store has {count} rows")]
    RowOutOfRange { row: u64, count: usize },

    #[error("store is empty")]
    EmptyStore,

    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("row {row} in query set has no ground-truth image")]
    MissingGroundTruth { row: usize },

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("encoder {0:?} does not expose a vector-Jacobian product")]
    EncoderNotDifferentiable(String),

    #[error("token {0:?} not in vocabulary")]
    UnknownToken(String),

    #[error("attribute {attribute:?} has no {polarity} rows")]
    EmptyGroup { attribute: String, polarity: &'static str },

    #[error("row {row} is unlabeled for attribute {attribute:?}")]
    UnlabeledRow { row: usize, attribute: String },

    #[error("pair list is empty")]
    EmptyPairs,

    #[error("missing prototype: {0}")]
    MissingPrototype(String),

    #[error("attribute {0:?} has no labeled rows")]
    NoLabeledRows(String),

    #[error("covariance is degenerate (rank {rank})")]
    DegenerateCovariance { rank: usize },

    #[error("every dimension would be dropped")]
    AllDimsDropped,

    #[error("dimension {dim} too small for {needed} planted directions")]
    DimTooSmall { dim: usize, needed: usize },

    #[error("reports do not share k and query set: {0}")]
    MismatchedQuerySets(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the optimisation itself rather than of its inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
