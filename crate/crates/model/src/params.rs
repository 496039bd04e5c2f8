//! Named parameters, non-trainable buffers, and the per-forward context that
//! binds them to a [`Graph`].

use std::cell::RefCell;
use std::collections::BTreeMap;

use ndarray::{Array1, Ix1, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Grads, Graph, Tensor, Var};
use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.buffers.insert(name.into(), value);
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.buffers.get_mut(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.buffers.iter()
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn contains_prefix(&self, prefix: &str) -> bool {
        self.params
            .keys()
            .chain(self.buffers.keys())
            .any(|k| k.starts_with(prefix))
    }

    /// Replaces the value of an existing parameter or buffer, checking shape.
    pub fn assign(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .or_else(|| self.buffers.get_mut(name))
            .ok_or_else(|| ModelError::Config(format!("unknown tensor `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(ModelError::Shape(format!(
                "tensor `{name}`: expected {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub prefix: String,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// One forward pass: the graph, the parameters it reads, the mode, and the
/// dropout stream.
pub struct Ctx<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    train: bool,
    trainable: bool,
    vars: RefCell<BTreeMap<String, Var>>,
    rng: RefCell<ChaCha8Rng>,
    bn_updates: RefCell<Vec<BnUpdate>>,
}

impl<'a> Ctx<'a> {
    /// `train` selects batch statistics and active dropout; parameters are
    /// differentiable leaves.
    pub fn new(store: &'a ParamStore, train: bool, dropout_seed: u64) -> Self {
        Ctx {
            graph: Graph::new(),
            store,
            train,
            trainable: true,
            vars: RefCell::new(BTreeMap::new()),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(dropout_seed)),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    /// Evaluation-mode context with no gradient bookkeeping.
    pub fn inference(store: &'a ParamStore) -> Self {
        let mut ctx = Ctx::new(store, false, 0);
        ctx.trainable = false;
        ctx
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.borrow().get(name) {
            return Ok(v);
        }
        let value = self
            .store
            .param(name)
            .ok_or_else(|| ModelError::Config(format!("missing parameter `{name}`")))?
            .clone();
        let v = if self.trainable {
            self.graph.leaf(value)
        } else {
            self.graph.constant(value)
        };
        self.vars.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    pub fn buffer(&self, name: &str) -> Result<&'a Tensor> {
        self.store
            .buffer(name)
            .ok_or_else(|| ModelError::Config(format!("missing buffer `{name}`")))
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.store.param(name).is_some()
    }

    /// Inverted dropout; identity outside training or for `p == 0`.
    pub fn dropout(&self, x: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            return x;
        }
        let shape = self.graph.shape(x);
        let keep = 1.0 / (1.0 - p);
        let mut rng = self.rng.borrow_mut();
        let mask = Tensor::from_shape_fn(IxDyn(&shape), |_| if rng.random::<f64>() < p { 0.0 } else { keep });
        self.graph.mul_const(x, mask)
    }

    pub(crate) fn record_bn(&self, prefix: &str, mean: Array1<f64>, var: Array1<f64>) {
        self.bn_updates.borrow_mut().push(BnUpdate {
            prefix: prefix.to_string(),
            mean,
            var,
        });
    }

    pub fn bn_updates(&self) -> Vec<BnUpdate> {
        self.bn_updates.borrow().clone()
    }

    /// Gradient of every parameter that took part in the pass.
    pub fn param_grads(&self, grads: &Grads) -> BTreeMap<String, Tensor> {
        self.vars
            .borrow()
            .iter()
            .filter_map(|(k, &v)| grads.get(v).map(|g| (k.clone(), g.clone())))
            .collect()
    }
}

/// Blends batch statistics into the running buffers with the given momentum.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate], momentum: f64) {
    for u in updates {
        for (suffix, batch) in [("running_mean", &u.mean), ("running_var", &u.var)] {
            if let Some(buf) = store.buffer_mut(&format!("{}.{suffix}", u.prefix)) {
                let mut b = buf.view_mut().into_dimensionality::<Ix1>().expect("rank-1 buffer");
                b.zip_mut_with(batch, |r, &x| *r = (1.0 - momentum) * *r + momentum * x);
            }
        }
    }
}
