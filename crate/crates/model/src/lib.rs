//! Saliency model: a patch-8 transformer adapter, the dynamic-upsampling
//! edge-preserving decoder, the training losses, checkpoints, and the small
//! reverse-mode autodiff they are built on.

pub mod autograd;
pub mod checkpoint;
pub mod dedecoder;
pub mod error;
pub mod gradcheck;
pub mod losskit;
pub mod params;

pub use dedecoder::{Model, ModelConfig, ModelOutput, Upsampler};
pub use error::{ModelError, Result};
pub use losskit::LossWeights;
pub use params::{Ctx, ParamStore};
