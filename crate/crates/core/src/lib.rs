//! Shared domain types for the sodkit salient-object-detection toolkit.
//!
//! This crate owns the value types every other crate passes around
//! (image records, saliency maps, binary masks and their roles), the
//! JSON Lines manifest format, the 0/255 PNG mask encoding, a handful of
//! image helpers, and the synthetic shapes generator used as a test fixture
//! throughout the workspace.

pub mod error;
pub mod imageops;
pub mod manifest;
pub mod mask_io;
pub mod synth;
pub mod types;

pub use error::{CoreError, Result};
pub use manifest::{read_manifest, write_manifest};
pub use mask_io::{read_mask, write_mask};
pub use types::{
    BinaryMask, BoxCoords, Category, CertaintyMask, EdgeMap, ImageRecord, Provenance, PseudoLabel, SaliencyMap,
    SourcePool, Split,
};
