//! Per-image metrics.
//!
//! Thresholds follow the grid `t_k = k / 255`, `k = 0..=255`. A pixel is
//! predicted salient at `t` iff `Y >= t` and `Y > 0`, so `t = 0` does not turn
//! every pixel on.

use ndarray::ArrayView2;
use sodkit_core::BinaryMask;

use crate::error::{EvalError, Result};

pub const N_THRESHOLDS: usize = 256;
pub const BETA2: f64 = 0.3;
/// Object/region balance of the structure measure.
pub const ALPHA: f64 = 0.5;

pub fn thresholds() -> Vec<f64> {
    (0..N_THRESHOLDS).map(|k| k as f64 / 255.0).collect()
}

fn check(y: ArrayView2<f64>, g: &BinaryMask) -> Result<()> {
    if y.dim() != g.shape() {
        return Err(EvalError::Shape {
            pred: y.dim(),
            gt: g.shape(),
        });
    }
    for ((row, col), &value) in y.indexed_iter() {
        if !(0.0..=1.0).contains(&value) {
            return Err(EvalError::OutOfRange { row, col, value });
        }
    }
    Ok(())
}

#[inline]
fn predicted(v: f64, t: f64) -> bool {
    v >= t && v > 0.0
}

pub fn mae(y: ArrayView2<f64>, g: &BinaryMask) -> Result<f64> {
    check(y, g)?;
    let n = y.len() as f64;
    let total: f64 = y
        .indexed_iter()
        .map(|((r, c), &v)| if g.get(r, c) { 1.0 - v } else { v })
        .sum();
    Ok(total / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `None` when the ground truth has no foreground.
    pub fn prf(&self) -> Option<Prf> {
        let positives = self.tp + self.fn_;
        if positives == 0 {
            return None;
        }
        let predicted = self.tp + self.fp;
        let precision = if predicted == 0 {
            0.0
        } else {
            self.tp as f64 / predicted as f64
        };
        let recall = self.tp as f64 / positives as f64;
        let f = if precision + recall == 0.0 {
            0.0
        } else {
            (1.0 + BETA2) * precision * recall / (BETA2 * precision + recall)
        };
        Some(Prf { precision, recall, f })
    }

    /// Enhanced-alignment score of the binarized map. Only four
    /// (prediction, truth) combinations exist, so the pixel average is a
    /// weighted sum over them.
    pub fn e_score(&self) -> f64 {
        let n = self.total() as f64;
        let gt_pos = self.tp + self.fn_;
        let pred_pos = (self.tp + self.fp) as f64;
        if gt_pos == 0 {
            return 1.0 - pred_pos / n;
        }
        if gt_pos == self.total() {
            return pred_pos / n;
        }
        let mu_y = pred_pos / n;
        let mu_g = gt_pos as f64 / n;
        let term = |yb: f64, gb: f64| {
            let (fy, fg) = (yb - mu_y, gb - mu_g);
            let xi = 2.0 * fg * fy / (fg * fg + fy * fy);
            (1.0 + xi) * (1.0 + xi) / 4.0
        };
        (self.tp as f64 * term(1.0, 1.0)
            + self.fp as f64 * term(1.0, 0.0)
            + self.fn_ as f64 * term(0.0, 1.0)
            + self.tn as f64 * term(0.0, 0.0))
            / n
    }
}

pub fn confusion_at(y: ArrayView2<f64>, g: &BinaryMask, t: f64) -> Result<Confusion> {
    check(y, g)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(EvalError::Threshold(t));
    }
    let mut c = Confusion::default();
    for ((r, col), &v) in y.indexed_iter() {
        match (predicted(v, t), g.get(r, col)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Confusion counts at every grid threshold, from one sort per class.
pub fn confusion_sweep(y: ArrayView2<f64>, g: &BinaryMask) -> Result<Vec<Confusion>> {
    check(y, g)?;
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for ((r, c), &v) in y.indexed_iter() {
        if g.get(r, c) {
            fg.push(v)
        } else {
            bg.push(v)
        }
    }
    fg.sort_by(f64::total_cmp);
    bg.sort_by(f64::total_cmp);
    // Ascending order makes "not predicted" a prefix.
    let on = |vals: &[f64], t: f64| vals.len() - vals.partition_point(|&v| !predicted(v, t));
    Ok(thresholds()
        .into_iter()
        .map(|t| {
            let tp = on(&fg, t);
            let fp = on(&bg, t);
            Confusion {
                tp,
                fp,
                fn_: fg.len() - tp,
                tn: bg.len() - fp,
            }
        })
        .collect())
}

pub fn f_measure_at(y: ArrayView2<f64>, g: &BinaryMask, t: f64) -> Result<Prf> {
    confusion_at(y, g, t)?.prf().ok_or(EvalError::EmptyGroundTruth)
}

pub fn e_measure_at(y: ArrayView2<f64>, g: &BinaryMask, t: f64) -> Result<f64> {
    Ok(confusion_at(y, g, t)?.e_score())
}

/// Mean enhanced-alignment score over the threshold grid.
pub fn image_e_measure(y: ArrayView2<f64>, g: &BinaryMask) -> Result<f64> {
    let sweep = confusion_sweep(y, g)?;
    Ok(sweep.iter().map(Confusion::e_score).sum::<f64>() / N_THRESHOLDS as f64)
}

fn object_score(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    2.0 * mean / (mean * mean + 1.0 + std + f64::EPSILON)
}

/// SSIM-style similarity of one rectangular block; `g` is 0/1.
fn block_ssim(y: ArrayView2<f64>, g: ArrayView2<f64>) -> f64 {
    let n = y.len();
    if n == 0 {
        return 0.0;
    }
    let mx = y.sum() / n as f64;
    let my = g.sum() / n as f64;
    let denom = (n.max(2) - 1) as f64;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in y.iter().zip(g.iter()) {
        sx += (a - mx) * (a - mx);
        sy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    let (sx, sy, sxy) = (sx / denom, sy / denom, sxy / denom);
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(y: ArrayView2<f64>, g: &BinaryMask) -> f64 {
    use ndarray::s;
    let (h, w) = y.dim();
    let (mut sum_r, mut sum_c, mut count) = (0.0, 0.0, 0usize);
    for ((r, c), &v) in g.view().indexed_iter() {
        if v != 0 {
            sum_r += r as f64;
            sum_c += c as f64;
            count += 1;
        }
    }
    // Split after the rounded centroid, so both top/left blocks are non-empty.
    let cy = (sum_r / count as f64).round() as usize + 1;
    let cx = (sum_c / count as f64).round() as usize + 1;
    let gf = g.to_f64();
    let area = (h * w) as f64;
    let blocks = [
        (s![..cy, ..cx], (cy * cx) as f64),
        (s![..cy, cx..], (cy * (w - cx)) as f64),
        (s![cy.., ..cx], ((h - cy) * cx) as f64),
        (s![cy.., cx..], ((h - cy) * (w - cx)) as f64),
    ];
    blocks
        .into_iter()
        .map(|(sl, size)| size / area * block_ssim(y.slice(sl), gf.slice(sl)))
        .sum()
}

/// Structure measure: object- and region-aware similarity of a real-valued
/// map to a binary mask.
pub fn s_measure(y: ArrayView2<f64>, g: &BinaryMask) -> Result<f64> {
    check(y, g)?;
    let n = y.len();
    let fg_count = g.count_ones();
    let mean_y = y.sum() / n as f64;
    if fg_count == 0 {
        return Ok(1.0 - mean_y);
    }
    if fg_count == n {
        return Ok(mean_y);
    }
    let mut fg = Vec::with_capacity(fg_count);
    let mut bg = Vec::with_capacity(n - fg_count);
    for ((r, c), &v) in y.indexed_iter() {
        if g.get(r, c) {
            fg.push(v)
        } else {
            bg.push(1.0 - v)
        }
    }
    let u = fg_count as f64 / n as f64;
    let object = u * object_score(&fg) + (1.0 - u) * object_score(&bg);
    let region = region_score(y, g);
    Ok((ALPHA * object + (1.0 - ALPHA) * region).max(0.0))
}

/// Everything the dataset aggregation needs from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    pub mae: f64,
    pub s: f64,
    pub e: f64,
    /// Precision/recall/F per threshold; `None` for an empty ground truth.
    pub sweep: Option<Vec<Prf>>,
}

pub fn score_image(y: ArrayView2<f64>, g: &BinaryMask) -> Result<ImageScores> {
    let confusions = confusion_sweep(y, g)?;
    let e = confusions.iter().map(Confusion::e_score).sum::<f64>() / N_THRESHOLDS as f64;
    let sweep = if g.is_empty() {
        None
    } else {
        Some(confusions.iter().map(|c| c.prf().expect("non-empty truth")).collect())
    };
    Ok(ImageScores {
        mae: mae(y, g)?,
        s: s_measure(y, g)?,
        e,
        sweep,
    })
}
