use std::path::PathBuf;

use sodkit_core::CoreError;
use thiserror::Error;

pub type Result<T, E = AnnotateError> = std::result::Result<T, E>;

/// Failure reported by a model backend.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend failed: {0}")]
    Failed(String),
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("invalid phrase `{text}`: {reason}")]
    Phrase { text: String, reason: String },

    #[error("invalid phrase set for `{image_id}`: {reason}")]
    PhraseSet { image_id: String, reason: String },

    #[error("backend output for `{image_id}` is unusable: {reason}")]
    BackendOutput { image_id: String, reason: String },

    #[error("box {bbox:?} for `{image_id}` is invalid: {reason}")]
    InvalidBox {
        image_id: String,
        bbox: sodkit_core::BoxCoords,
        reason: String,
    },

    #[error("mask shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("fraction {0} is outside (0, 1]")]
    Fraction(f64),

    #[error("ratio {0} is outside (0, 1)")]
    Ratio(f64),

    #[error("no manual annotation for sampled image `{0}`")]
    MissingAnnotation(String),

    #[error("unknown source reference `{0}`")]
    UnknownSource(String),

    #[error("duplicate entry `{0}`")]
    Duplicate(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl AnnotateError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AnnotateError::Io {
            path: path.into(),
            source,
        }
    }
}
