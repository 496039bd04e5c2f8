//! JSON checkpoints: a flat name -> tensor map plus the model configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::dedecoder::{Model, ModelConfig};
use crate::error::{ModelError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: ModelConfig,
    /// Free-form training state (iteration, epoch, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, TensorRecord>,
}

fn record(t: &Tensor) -> TensorRecord {
    TensorRecord {
        shape: t.shape().to_vec(),
        data: t.iter().copied().collect(),
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model, meta: serde_json::Value) -> Self {
        let tensors = model
            .store
            .params()
            .chain(model.store.buffers())
            .map(|(k, t)| (k.clone(), record(t)))
            .collect();
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            config: model.config.clone(),
            meta,
            tensors,
        }
    }

    /// Rebuilds the model; every tensor of the configured architecture must be
    /// present with its exact shape, and no others.
    pub fn into_model(self) -> Result<Model> {
        let err = |m: String| ModelError::Checkpoint {
            path: Default::default(),
            message: m,
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(err(format!("unsupported schema version {}", self.schema_version)));
        }
        let mut model = Model::new(self.config, 0)?;
        let expected: Vec<String> = model
            .store
            .params()
            .chain(model.store.buffers())
            .map(|(k, _)| k.clone())
            .collect();
        for name in &expected {
            if !self.tensors.contains_key(name) {
                return Err(err(format!("missing tensor `{name}`")));
            }
        }
        for (name, rec) in self.tensors {
            let t = Tensor::from_shape_vec(IxDyn(&rec.shape), rec.data)
                .map_err(|e| err(format!("tensor `{name}`: {e}")))?;
            model.store.assign(&name, t).map_err(|e| err(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| ModelError::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, text).map_err(|e| ModelError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub fn save_model(model: &Model, meta: serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model, meta).save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    Checkpoint::load(path)?.into_model().map_err(|e| match e {
        ModelError::Checkpoint { message, .. } => ModelError::Checkpoint {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dedecoder::ModelConfig;

    #[test]
    fn roundtrip_is_exact() {
        let dir = std::env::temp_dir().join(format!("sodkit-ckpt-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.json");
        let mut m = Model::new(
            ModelConfig {
                edge_decoder: false,
                ..ModelConfig::toy()
            },
            11,
        )
        .unwrap();
        m.store.buffer_mut("head.bn.running_mean").unwrap().fill(0.1 + 0.2);
        save_model(&m, serde_json::json!({"iteration": 3}), &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let ck = Checkpoint::load(&path).unwrap();
        assert!(!ck.tensors.keys().any(|k| k.starts_with("edge.")));
        assert_eq!(ck.meta["iteration"], 3);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_or_misshaped_tensor_is_rejected() {
        let m = Model::new(ModelConfig::toy(), 1).unwrap();
        let mut ck = Checkpoint::from_model(&m, serde_json::Value::Null);
        ck.tensors.remove("head.out.bias");
        assert!(ck.clone().into_model().is_err());
        let mut ck = Checkpoint::from_model(&m, serde_json::Value::Null);
        ck.tensors.get_mut("head.out.bias").unwrap().shape = vec![1, 1];
        assert!(ck.into_model().is_err());
        let mut ck = Checkpoint::from_model(&m, serde_json::Value::Null);
        ck.schema_version = 99;
        assert!(ck.into_model().is_err());
    }
}
