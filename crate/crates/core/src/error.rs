//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong when building models or running experiments.
///
/// Variants are grouped roughly by origin: configuration problems (bad
/// hyperparameters, impossible shapes), numerical problems (singular systems,
/// zero spectral radius), and data problems (I/O, parsing, series too short).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {context} (expected {expected}, got {actual})")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquareMatrix { rows: usize, cols: usize },

    #[error("duplicate entry at ({row}, {col}) in sparse matrix construction")]
    DuplicateEntry { row: usize, col: usize },

    #[error("index ({row}, {col}) out of bounds for {rows}x{cols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("spectral radius is zero; cannot rescale matrix")]
    ZeroSpectralRadius,

    #[error("linear system is singular or not positive definite ({context})")]
    SingularSystem { context: &'static str },

    #[error("model has not been trained yet")]
    NotTrained,

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("series too short: need at least {needed} samples, have {actual}")]
    SeriesTooShort { needed: usize, actual: usize },

    #[error("denominator is zero in {context}")]
    ZeroDenominator { context: &'static str },

    #[error("pruning removed every feature; model would be empty")]
    EmptyModel,

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("unknown column {column:?}; available: {available:?}")]
    UnknownColumn {
        column: String,
        available: Vec<String>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to an IO error.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::ShapeMismatch { .. }
                | Error::NonSquareMatrix { .. }
                | Error::DuplicateEntry { .. }
                | Error::IndexOutOfBounds { .. }
                | Error::Manifest(_)
                | Error::EmptyModel
                | Error::NotTrained
        )
    }
}
