//! Annotation side of sodkit: the "(adjective) + noun" phrase grammar and
//! captioner contract, the grounder/segmenter pseudo-label pipeline, and the
//! dataset curation tooling (manifests, category statistics, splits).
//!
//! Foundation models sit behind the [`phrasekit::CaptionerBackend`],
//! [`labelgen::GrounderBackend`] and [`labelgen::SegmenterBackend`] traits.
//! Deterministic mock implementations over the synthetic shapes fixture are
//! provided for every one of them.

pub mod datasetkit;
pub mod error;
pub mod labelgen;
pub mod phrasekit;

pub use error::{AnnotateError, BackendError, Result};
