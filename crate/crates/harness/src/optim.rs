//! AdamW with global-norm gradient clipping.

use std::collections::BTreeMap;

use sodkit_model::autograd::Tensor;
use sodkit_model::ParamStore;

use crate::config::{ADAM_BETAS, ADAM_EPS, WEIGHT_DECAY};

pub type GradMap = BTreeMap<String, Tensor>;

pub fn global_norm(grads: &GradMap) -> f64 {
    grads.values().flat_map(|t| t.iter()).map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norms before and after.
pub fn clip_grad_norm(grads: &mut GradMap, max_norm: f64) -> (f64, f64) {
    let before = global_norm(grads);
    if before > max_norm {
        let k = max_norm / before;
        for t in grads.values_mut() {
            t.mapv_inplace(|g| g * k);
        }
    }
    (before, global_norm(grads))
}

#[derive(Debug, Clone, Default)]
pub struct AdamW {
    step: u64,
    m: GradMap,
    v: GradMap,
}

impl AdamW {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradMap, lr: f64) {
        self.step += 1;
        let (b1, b2) = ADAM_BETAS;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (name, g) in grads {
            let Some(p) = store.param_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.raw_dim()));
            let decay = if p.ndim() >= 2 { WEIGHT_DECAY } else { 0.0 };
            ndarray::Zip::from(&mut *p)
                .and(&mut *m)
                .and(&mut *v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let update = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    *p -= lr * (update + decay * *p);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = GradMap::new();
        g.insert("a".into(), Tensor::from_elem(IxDyn(&[2]), 3.0));
        g.insert("b".into(), Tensor::from_elem(IxDyn(&[1]), 4.0));
        let (before, after) = clip_grad_norm(&mut g, 0.5);
        assert!((before - 34f64.sqrt()).abs() < 1e-12);
        assert!((after - 0.5).abs() < 1e-12);
        let (b2, a2) = clip_grad_norm(&mut g, 1.0);
        assert_eq!(b2, a2);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.insert_param("b", Tensor::from_elem(IxDyn(&[3]), 1.0));
        let mut g = GradMap::new();
        g.insert(
            "b".into(),
            Tensor::from_shape_vec(IxDyn(&[3]), vec![2.0, -0.5, 0.0]).unwrap(),
        );
        let mut opt = AdamW::new();
        opt.step(&mut store, &g, 0.1);
        let p = store.param("b").unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn decay_applies_to_weights_only() {
        let mut store = ParamStore::new();
        store.insert_param("w", Tensor::from_elem(IxDyn(&[1, 1]), 1.0));
        let mut g = GradMap::new();
        g.insert("w".into(), Tensor::zeros(IxDyn(&[1, 1])));
        AdamW::new().step(&mut store, &g, 0.1);
        assert!((store.param("w").unwrap()[[0, 0]] - (1.0 - 0.1 * WEIGHT_DECAY)).abs() < 1e-15);
    }
}
