use thiserror::Error;

/// Errors raised by the release pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid privacy parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    #[error("eigensolver failed to converge on a {order}x{order} matrix")]
    EigenFailure { order: usize },

    #[error("unsupported set: {0}")]
    UnsupportedSet(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("tensor with {entries} entries exceeds the limit of {limit}")]
    SizeGuard { entries: u128, limit: u64 },

    #[error("order k = {0} is odd; flattening needs even k (use the threshold or gaussian method)")]
    OddOrder(usize),

    #[error("record {record} has {nonzeros} nonzero features, exceeding declared sparsity {sparsity}")]
    NotSparse {
        record: usize,
        nonzeros: usize,
        sparsity: usize,
    },

    #[error("index {index} out of range for side {side}")]
    IndexOutOfRange { index: usize, side: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical routines rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::EigenFailure { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
