use std::path::PathBuf;

use sodkit_annotate::AnnotateError;
use sodkit_core::CoreError;
use sodkit_eval::EvalError;
use sodkit_model::ModelError;
use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Annotate(#[from] AnnotateError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config file {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },

    #[error("iteration {iter} outside the schedule range [0, {max}]")]
    IterOutOfRange { iter: usize, max: usize },

    #[error("no pseudo-label for training image `{image_id}` (looked for {path})")]
    MissingLabel { image_id: String, path: PathBuf },

    #[error("no training images in the manifest")]
    NoTrainingImages,

    #[error("non-finite loss at iteration {iter} (image `{image_id}`): {detail}")]
    NonFiniteLoss {
        iter: usize,
        image_id: String,
        detail: String,
    },

    #[error("unknown ablation preset `{0}` (expected adjectives, dataset or decoder)")]
    UnknownPreset(String),

    #[error("ablation preset `{preset}` needs {what}")]
    MissingArm { preset: String, what: String },

    #[error("reports disagree on columns: {0}")]
    ColumnMismatch(String),

    #[error("no reports given")]
    NoReports,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {message}")]
    Json { path: PathBuf, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
