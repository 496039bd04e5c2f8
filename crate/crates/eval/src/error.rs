use std::path::PathBuf;

use sodkit_core::CoreError;
use thiserror::Error;

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("shape mismatch: prediction {pred:?}, ground truth {gt:?}")]
    Shape { pred: (usize, usize), gt: (usize, usize) },

    #[error("prediction value {value} at ({row}, {col}) is outside [0, 1]")]
    OutOfRange { row: usize, col: usize, value: f64 },

    #[error("threshold {0} is outside [0, 1]")]
    Threshold(f64),

    #[error("ground truth has no foreground; precision and recall are undefined")]
    EmptyGroundTruth,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{preds} predictions but {gts} ground-truth masks")]
    Length { preds: usize, gts: usize },

    #[error("missing counterpart file {0}")]
    MissingCounterpart(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl EvalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.into(),
            source,
        }
    }
}
