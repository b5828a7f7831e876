use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: lhs {lhs:?}, rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape for {op}: {shape:?} ({detail})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        detail: String,
    },
    #[error("{op}: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { op: &'static str, shape: Vec<usize> },
    #[error("softmax: row {row} is fully masked")]
    FullyMaskedRow { row: usize },
    #[error("empty neighborhood for token {token}")]
    EmptyNeighborhood { token: usize },
    #[error("{what} out of range: {value} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        value: String,
        limit: String,
    },
    #[error("line {line}: {msg}")]
    Ingest { line: usize, msg: String },
    #[error("case {case}: {msg}")]
    InvalidCase { case: u64, msg: String },
    #[error("parameter name already registered: {0}")]
    DuplicateParam(String),
    #[error("unknown parameter in checkpoint: {0}")]
    UnknownParam(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("metrics undefined: {0}")]
    Metrics(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
