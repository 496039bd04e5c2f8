//! Training configuration.
//!
//! The file format is flat `key = value` lines (a TOML subset). Model
//! architecture keys carry a `model.` prefix, e.g. `model.embed_dim = 32`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sodkit_model::{LossWeights, ModelConfig};

use crate::error::{HarnessError, Result};
use crate::schedule::Schedule;

/// AdamW moment decay rates.
pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;
/// Decoupled weight decay, applied to weight tensors of rank >= 2 only.
pub const WEIGHT_DECAY: f64 = 0.01;
/// Running-statistics momentum of batch norm.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_iters: usize,
    pub poly_power: f64,
    pub grad_clip: f64,
    pub batch: usize,
    pub epochs: usize,
    pub input_size: usize,
    pub dropout: f64,
    pub flip_prob: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub lambda_edge: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainConfig {
            base_lr: 1e-5,
            warmup_iters: 12_000,
            poly_power: 0.9,
            grad_clip: 0.5,
            batch: 8,
            epochs: 60,
            input_size: 352,
            dropout: 0.1,
            flip_prob: 0.5,
            alpha1: w.alpha1,
            alpha2: w.alpha2,
            alpha3: w.alpha3,
            lambda_edge: w.lambda_edge,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// CPU-scale recipe for the synthetic shapes set: 64x64 inputs, the toy
    /// architecture, and a short schedule with a larger learning rate.
    pub fn toy() -> Self {
        TrainConfig {
            base_lr: 2e-3,
            warmup_iters: 20,
            epochs: 25,
            input_size: 64,
            model: ModelConfig::toy(),
            ..TrainConfig::default()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            lambda_edge: self.lambda_edge,
        }
    }

    /// Architecture actually built: `dropout` comes from the training
    /// config and `edge_decoder` from the run flag.
    pub fn model_config(&self, edge_decoder: bool) -> ModelConfig {
        ModelConfig {
            dropout: self.dropout,
            edge_decoder,
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("poly_power", self.poly_power),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("warmup_iters", self.warmup_iters),
            ("batch", self.batch),
            ("epochs", self.epochs),
            ("input_size", self.input_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.input_size % 32 != 0 {
            return bad(format!("input_size {} is not divisible by 32", self.input_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob {} outside [0, 1]", self.flip_prob));
        }
        self.weights().validate()?;
        self.model_config(self.model.edge_decoder).validate()?;
        Ok(())
    }

    /// `epochs * ceil(n_train / batch)`.
    pub fn max_iter(&self, n_train: usize) -> usize {
        self.epochs * n_train.div_ceil(self.batch)
    }

    pub fn schedule(&self, n_train: usize) -> Result<Schedule> {
        Schedule::new(self.base_lr, self.warmup_iters, self.max_iter(n_train), self.poly_power)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| HarnessError::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Flat `key = value` rendering that [`TrainConfig::load`] reads back.
    pub fn to_flat_string(&self) -> String {
        let m = &self.model;
        let mut lines = vec![
            format!("base_lr = {:?}", self.base_lr),
            format!("warmup_iters = {}", self.warmup_iters),
            format!("poly_power = {:?}", self.poly_power),
            format!("grad_clip = {:?}", self.grad_clip),
            format!("batch = {}", self.batch),
            format!("epochs = {}", self.epochs),
            format!("input_size = {}", self.input_size),
            format!("dropout = {:?}", self.dropout),
            format!("flip_prob = {:?}", self.flip_prob),
            format!("alpha1 = {:?}", self.alpha1),
            format!("alpha2 = {:?}", self.alpha2),
            format!("alpha3 = {:?}", self.alpha3),
            format!("lambda_edge = {:?}", self.lambda_edge),
            format!("seed = {}", self.seed),
        ];
        lines.extend([
            format!("model.embed_dim = {}", m.embed_dim),
            format!("model.depth = {}", m.depth),
            format!("model.heads = {}", m.heads),
            format!("model.mlp_ratio = {}", m.mlp_ratio),
            format!(
                "model.pyramid_channels = [{}, {}, {}]",
                m.pyramid_channels[0], m.pyramid_channels[1], m.pyramid_channels[2]
            ),
            format!("model.head_channels = {}", m.head_channels),
            format!("model.scope_factor = {:?}", m.scope_factor),
            format!("model.reduction = {}", m.reduction),
            format!("model.edge_decoder = {}", m.edge_decoder),
            format!(
                "model.upsampler = \"{}\"",
                serde_json::to_value(m.upsampler)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default()
            ),
        ]);
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.base_lr, c.warmup_iters, c.grad_clip), (1e-5, 12_000, 0.5));
        assert_eq!((c.batch, c.epochs, c.input_size), (8, 60, 352));
        assert_eq!((c.dropout, c.flip_prob, c.poly_power), (0.1, 0.5, 0.9));
        c.validate().unwrap();
        TrainConfig::toy().validate().unwrap();
    }

    #[test]
    fn flat_file_roundtrip() {
        let mut c = TrainConfig::toy();
        c.seed = 17;
        c.model.upsampler = sodkit_model::Upsampler::Bilinear;
        let back = TrainConfig::from_toml_str(&c.to_flat_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_uses_defaults_and_rejects_unknown_keys() {
        let c = TrainConfig::from_toml_str("batch = 4\nmodel.depth = 2\n").unwrap();
        assert_eq!(c.batch, 4);
        assert_eq!(c.model.depth, 2);
        assert_eq!(c.epochs, 60);
        assert!(TrainConfig::from_toml_str("batchsize = 4\n").is_err());
        assert!(TrainConfig::from_toml_str("model.depthh = 4\n").is_err());
        assert!(TrainConfig::from_toml_str("input_size = 100\n").is_err());
        assert!(TrainConfig::from_toml_str("grad_clip = 0\n").is_err());
    }

    #[test]
    fn max_iter_rounds_batches_up() {
        let c = TrainConfig::toy();
        assert_eq!(c.max_iter(64), 25 * 8);
        assert_eq!(c.max_iter(65), 25 * 9);
    }
}
