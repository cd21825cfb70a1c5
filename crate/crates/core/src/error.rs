use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix must have at least one row and one column, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength {
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("zero divisor at ({row}, {col})")]
    ZeroDivisor { row: usize, col: usize },

    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroRow { row: usize },

    #[error("non-finite intermediate value in {stage}")]
    NonFinite { stage: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("head count {h} does not divide embedding dimension {d_emb}")]
    HeadDivisibility { d_emb: usize, h: usize },

    #[error("integer overflow while evaluating {0}")]
    Overflow(&'static str),

    #[error("failed to allocate {entries} entries")]
    Allocation { entries: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
