//! Central finite-difference verification of graph gradients.

use std::collections::BTreeMap;

use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tensor, Var};
use crate::error::Result;
use crate::params::{Ctx, ParamStore};

/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are compared absolutely. Central differences at step 1e-6 carry
/// roundoff near 1e-9 on O(10) objectives; the floor keeps that well under
/// a 1e-3 tolerance.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `tensor[index]` with the largest error.
    pub worst: String,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn entries(len: usize, cap: usize) -> Vec<usize> {
    if len <= cap {
        (0..len).collect()
    } else {
        (0..cap).map(|k| k * len / cap).collect()
    }
}

/// Checks the gradients of `sum(f(inputs) * P)`, with `P` a fixed random
/// projection, with respect to every input and every parameter `f` reads.
/// At most `max_per_tensor` evenly spaced entries of each tensor are probed.
pub fn check_gradients<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    train: bool,
    step: f64,
    max_per_tensor: usize,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&Ctx, &[Var]) -> Result<Var>,
{
    let objective = |store: &ParamStore, inputs: &[Tensor], proj: Option<&Tensor>| -> Result<(f64, Tensor)> {
        let ctx = Ctx::new(store, train, 0);
        let leaves: Vec<Var> = inputs.iter().map(|t| ctx.graph.leaf(t.clone())).collect();
        let out = f(&ctx, &leaves)?;
        let value = ctx.graph.value(out);
        let p = proj.cloned().unwrap_or_else(|| Tensor::ones(value.raw_dim()));
        Ok(((&*value * &p).sum(), p))
    };
    let (_, ones) = objective(store, inputs, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let proj = Tensor::from_shape_fn(ones.raw_dim(), |_| rng.random_range(-1.0..1.0));

    let ctx = Ctx::new(store, train, 0);
    let leaves: Vec<Var> = inputs.iter().map(|t| ctx.graph.leaf(t.clone())).collect();
    let out = f(&ctx, &leaves)?;
    let pv = ctx.graph.constant(proj.clone());
    let loss = ctx.graph.sum(ctx.graph.mul(out, pv));
    let grads = ctx.graph.backward(loss);
    let param_grads: BTreeMap<String, Tensor> = ctx.param_grads(&grads);
    let input_grads: Vec<Tensor> = leaves
        .iter()
        .zip(inputs)
        .map(|(&l, t)| grads.get(l).cloned().unwrap_or_else(|| Tensor::zeros(t.raw_dim())))
        .collect();

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut note = |name: String, a: f64, n: f64| {
        let e = rel_err(a, n);
        report.checked += 1;
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = report.max_rel_err.max(e);
            report.worst = format!("{name} (analytic {a:e}, numeric {n:e})");
        }
    };

    for (k, analytic) in input_grads.iter().enumerate() {
        for idx in entries(inputs[k].len(), max_per_tensor) {
            let mut probe = inputs.to_vec();
            let base = flat(&probe[k])[idx];
            flat_mut(&mut probe[k])[idx] = base + step;
            let plus = objective(store, &probe, Some(&proj))?.0;
            flat_mut(&mut probe[k])[idx] = base - step;
            let minus = objective(store, &probe, Some(&proj))?.0;
            note(
                format!("input{k}[{idx}]"),
                flat(analytic)[idx],
                (plus - minus) / (2.0 * step),
            );
        }
    }

    let mut work = store.clone();
    for (name, analytic) in &param_grads {
        let len = analytic.len();
        for idx in entries(len, max_per_tensor) {
            let base = flat(work.param(name).expect("known parameter"))[idx];
            flat_mut(work.param_mut(name).expect("known parameter"))[idx] = base + step;
            let plus = objective(&work, inputs, Some(&proj))?.0;
            flat_mut(work.param_mut(name).expect("known parameter"))[idx] = base - step;
            let minus = objective(&work, inputs, Some(&proj))?.0;
            flat_mut(work.param_mut(name).expect("known parameter"))[idx] = base;
            note(
                format!("{name}[{idx}]"),
                flat(analytic)[idx],
                (plus - minus) / (2.0 * step),
            );
        }
    }
    Ok(report)
}

fn flat(t: &Tensor) -> &[f64] {
    t.as_slice().expect("standard layout")
}

fn flat_mut(t: &mut Tensor) -> &mut [f64] {
    t.as_slice_mut().expect("standard layout")
}

/// Random tensor with entries in `[-1, 1)`.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
}

/// Overwrites every parameter whose name contains `pattern` with small random
/// values (used to move offset projections away from zero).
pub fn randomize_params(store: &mut ParamStore, pattern: &str, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in store.params_mut() {
        if name.contains(pattern) {
            t.mapv_inplace(|_| rng.random_range(-scale..scale));
        }
    }
}
