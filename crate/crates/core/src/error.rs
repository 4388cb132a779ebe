use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of bounds for dimension {n}")]
    IndexOutOfBounds { index: usize, n: usize },

    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),

    #[error("matrix is not symmetric: entry ({row}, {col}) has no mirrored counterpart")]
    NotSymmetric { row: usize, col: usize },

    #[error("matrix market: {0}")]
    MatrixMarket(#[from] MatrixMarketError),

    #[error("wavelet: {0}")]
    Wavelet(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("factorization format: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum MatrixMarketError {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("non-real field `{0}`")]
    NonRealField(String),
    #[error("unsupported format `{0}` (only coordinate is supported)")]
    UnsupportedFormat(String),
    #[error("unsupported symmetry `{0}`")]
    UnsupportedSymmetry(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: index ({row}, {col}) out of bounds for {nrows}x{ncols}")]
    IndexOutOfBounds {
        line: usize,
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("matrix is {nrows}x{ncols}, expected square")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("expected {expected} entries, found {found}")]
    EntryCount { expected: usize, found: usize },
}
