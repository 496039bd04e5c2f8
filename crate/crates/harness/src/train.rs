//! The training loop.
//!
//! Each iteration loads one batch, runs the model in training mode, scores
//! every image with the weighted loss, averages over the batch, clips the
//! global gradient norm and takes one AdamW step. Iteration `i` (0-based)
//! uses `lr_at(i + 1)`, so the first step is not wasted at `lr = 0`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sodkit_core::{ImageRecord, Split};
use sodkit_model::autograd::{sigmoid, Tensor};
use sodkit_model::checkpoint::save_model;
use sodkit_model::losskit::{loss_terms, total_loss_grad, LossTerms};
use sodkit_model::params::apply_bn_updates;
use sodkit_model::{Ctx, Model, ModelError};

use crate::config::{TrainConfig, BN_MOMENTUM};
use crate::data::{load_batch, prepare_targets, TrainItem};
use crate::error::{HarnessError, Result};
use crate::optim::{clip_grad_norm, AdamW, GradMap};

/// One line of `loss_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// 1-based.
    pub iter: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Batch mean of the weighted loss.
    pub total: f64,
    pub bce: f64,
    pub pbce: f64,
    pub iou: f64,
    pub edge: f64,
    pub grad_norm: f64,
    /// Global norm after clipping; never above `grad_clip`.
    pub clipped_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogEntry>,
    pub log_path: PathBuf,
    /// One per epoch, in order.
    pub checkpoints: Vec<PathBuf>,
    /// Copy of the last epoch's checkpoint.
    pub final_checkpoint: PathBuf,
}

/// Training images of the manifest: the `train` split.
pub fn training_records(manifest: &[ImageRecord]) -> Vec<&ImageRecord> {
    manifest.iter().filter(|r| r.split == Split::Train).collect()
}

fn batch_tensor(items: &[TrainItem]) -> Tensor {
    let (_, h, w) = items[0].image.dim();
    let mut x = Array4::zeros((items.len(), 3, h, w));
    for (i, it) in items.iter().enumerate() {
        x.index_axis_mut(Axis(0), i).assign(&it.image);
    }
    x.into_dyn()
}

fn plane(t: &Tensor, i: usize) -> ArrayView2<'_, f64> {
    t.index_axis(Axis(0), i)
        .index_axis_move(Axis(0), 0)
        .into_dimensionality()
        .expect("N x 1 x H x W output")
}

struct StepResult {
    terms: LossTerms,
    total: f64,
    grads: GradMap,
    bn: Vec<sodkit_model::params::BnUpdate>,
}

fn forward_backward(model: &Model, cfg: &TrainConfig, items: &[TrainItem], iter: usize) -> Result<StepResult> {
    let weights = cfg.weights();
    let dropout_seed = cfg.seed ^ (iter as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let ctx = Ctx::new(&model.store, true, dropout_seed);
    let x = ctx.graph.constant(batch_tensor(items));
    let out = model.forward(&ctx, x)?;
    let logits = ctx.graph.value(out.saliency_logits);
    let edge_logits = out.edge_logits.map(|v| ctx.graph.value(v));
    let n = items.len();
    let inv_n = 1.0 / n as f64;

    let mut sal_grad = Tensor::zeros(logits.raw_dim());
    let mut edge_grad = edge_logits.as_ref().map(|e| Tensor::zeros(e.raw_dim()));
    let mut sum_terms = LossTerms::default();
    let mut sal_value = 0.0;
    let mut edge_value = 0.0;
    for (i, it) in items.iter().enumerate() {
        let y: Array2<f64> = plane(&logits, i).mapv(sigmoid);
        let edge = edge_logits.as_ref().map(|e| (plane(e, i), &it.edge));
        let diag = |detail: String| HarnessError::NonFiniteLoss {
            iter: iter + 1,
            image_id: it.image_id.clone(),
            detail,
        };
        let terms = loss_terms(y.view(), &it.label, &it.certainty, edge).map_err(|e| match e {
            ModelError::EmptyCertainty => diag("pseudo-label leaves no certain pixel".into()),
            other => other.into(),
        })?;
        let (dy, de) = total_loss_grad(y.view(), &it.label, &it.certainty, edge, &weights)?;
        let values = [terms.bce, terms.pbce, terms.iou, terms.edge];
        if values.iter().any(|v| !v.is_finite()) || dy.iter().any(|v| !v.is_finite()) {
            return Err(diag(format!("{terms:?}")));
        }
        // Chain through the sigmoid: dL/dlogit = dL/dy * y (1 - y).
        let mut g = sal_grad.index_axis_mut(Axis(0), i);
        let mut g = g
            .index_axis_mut(Axis(0), 0)
            .into_dimensionality::<ndarray::Ix2>()
            .expect("NCHW plane");
        ndarray::Zip::from(&mut g)
            .and(&dy)
            .and(&y)
            .for_each(|g, &d, &yv| *g = d * yv * (1.0 - yv) * inv_n);
        if let (Some(eg), Some(de)) = (edge_grad.as_mut(), de) {
            eg.index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), 0)
                .assign(&(de * inv_n));
        }
        sal_value += (weights.alpha1 * terms.bce + weights.alpha2 * terms.pbce + weights.alpha3 * terms.iou) * inv_n;
        edge_value += weights.lambda_edge * terms.edge * inv_n;
        sum_terms.bce += terms.bce * inv_n;
        sum_terms.pbce += terms.pbce * inv_n;
        sum_terms.iou += terms.iou * inv_n;
        sum_terms.edge += terms.edge * inv_n;
    }
    let mut loss = ctx.graph.custom_scalar(out.saliency_logits, sal_value, sal_grad);
    if let (Some(ev), Some(eg)) = (out.edge_logits, edge_grad) {
        let e = ctx.graph.custom_scalar(ev, edge_value, eg);
        loss = ctx.graph.add(loss, e);
    }
    let grads = ctx.graph.backward(loss);
    Ok(StepResult {
        terms: sum_terms,
        total: sal_value + edge_value,
        grads: ctx.param_grads(&grads),
        bn: ctx.bn_updates(),
    })
}

fn checkpoint_meta(cfg: &TrainConfig, epoch: usize, iter: usize) -> serde_json::Value {
    serde_json::json!({
        "epoch": epoch,
        "iteration": iter,
        "input_size": cfg.input_size,
        "seed": cfg.seed,
        "train_config": cfg,
    })
}

/// Trains on the `train` split of `manifest` with pseudo-labels
/// `<labels>/<image_id>.png`, writing `loss_log.jsonl`, one checkpoint per
/// epoch under `checkpoints/`, and `model.json` into `out_dir`.
pub fn train(
    cfg: &TrainConfig,
    manifest: &[ImageRecord],
    labels: &Path,
    edge_decoder: bool,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let records = training_records(manifest);
    if records.is_empty() {
        return Err(HarnessError::NoTrainingImages);
    }
    let owned: Vec<ImageRecord> = records.iter().map(|r| (*r).clone()).collect();
    prepare_targets(labels, &owned, cfg.input_size)?;
    let schedule = cfg.schedule(records.len())?;
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| HarnessError::io(&ckpt_dir, e))?;
    let log_path = out_dir.join("loss_log.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(|e| HarnessError::io(&log_path, e))?;

    let mut model = Model::new(cfg.model_config(edge_decoder), cfg.seed)?;
    let mut opt = AdamW::new();
    let mut log = Vec::with_capacity(schedule.max_iter);
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut iter = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order = records.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0xa076_1d64_78bd_642f));
        order.shuffle(&mut rng);
        let mut lines = String::new();
        for chunk in order.chunks(cfg.batch) {
            let items = load_batch(chunk, labels, cfg.input_size, cfg.seed, epoch, cfg.flip_prob)?;
            let mut step = forward_backward(&model, cfg, &items, iter)?;
            let (grad_norm, clipped_norm) = clip_grad_norm(&mut step.grads, cfg.grad_clip);
            let lr = schedule.lr_at(iter + 1)?;
            opt.step(&mut model.store, &step.grads, lr);
            apply_bn_updates(&mut model.store, &step.bn, BN_MOMENTUM);
            iter += 1;
            let entry = LogEntry {
                iter,
                epoch,
                lr,
                total: step.total,
                bce: step.terms.bce,
                pbce: step.terms.pbce,
                iou: step.terms.iou,
                edge: step.terms.edge,
                grad_norm,
                clipped_norm,
            };
            lines.push_str(&serde_json::to_string(&entry).expect("log entry serializes"));
            lines.push('\n');
            log::debug!("iter {iter} loss {:.5} lr {lr:.3e}", entry.total);
            log.push(entry);
        }
        log_file
            .write_all(lines.as_bytes())
            .and_then(|_| log_file.flush())
            .map_err(|e| HarnessError::io(&log_path, e))?;
        let path = ckpt_dir.join(format!("epoch_{:03}.json", epoch + 1));
        save_model(&model, checkpoint_meta(cfg, epoch + 1, iter), &path)?;
        log::info!(
            "epoch {} done, last loss {:.5}",
            epoch + 1,
            log.last().map_or(0.0, |e| e.total)
        );
        checkpoints.push(path);
    }
    let final_checkpoint = out_dir.join("model.json");
    save_model(&model, checkpoint_meta(cfg, cfg.epochs, iter), &final_checkpoint)?;
    Ok(TrainOutcome {
        model,
        log,
        log_path,
        checkpoints,
        final_checkpoint,
    })
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| HarnessError::Json {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Window of [`loss_endpoints`] used when reporting loss reduction.
pub const LOSS_WINDOW: usize = 8;

/// Mean batch loss over the first and last `k` iterations.
pub fn loss_endpoints(log: &[LogEntry], k: usize) -> (f64, f64) {
    let k = k.clamp(1, log.len().max(1));
    let mean = |s: &[LogEntry]| s.iter().map(|e| e.total).sum::<f64>() / s.len().max(1) as f64;
    (
        mean(&log[..k.min(log.len())]),
        mean(&log[log.len().saturating_sub(k)..]),
    )
}
