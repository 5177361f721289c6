//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while loading data, fitting a flow, or
/// evaluating an estimator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("dataset needs at least 2 rows and 1 column (got {rows} x {cols})")]
    EmptyData { rows: usize, cols: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("fraction {fraction} splits {n} rows into a part with fewer than 2 rows")]
    BadFraction { fraction: f64, n: usize },

    #[error("degenerate dimension {column}{}: zero range", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    DegenerateDimension { column: usize, layer: Option<usize> },

    #[error("too few samples: {n} (need more than {min})")]
    TooFewSamples { n: usize, min: usize },

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("row count mismatch: {left} vs {right}")]
    RowCountMismatch { left: usize, right: usize },

    #[error("covariance matrix is rank deficient")]
    RankDeficient,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("input outside the transform domain: {0}")]
    OutOfDomain(String),

    #[error("model format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach flow-layer context to a univariate error.
    pub(crate) fn at_layer(self, layer_index: usize) -> Self {
        match self {
            Error::DegenerateDimension { column, .. } => Error::DegenerateDimension {
                column,
                layer: Some(layer_index),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
