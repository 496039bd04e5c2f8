//! Dataset-level aggregation, directory evaluation and report files.
//!
//! Images whose ground truth has no foreground contribute to MAE, S and E but
//! are left out of the F-measure and PR averages, and are flagged.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sodkit_core::imageops::{read_gray, resize_bilinear};
use sodkit_core::BinaryMask;

use crate::error::{EvalError, Result};
use crate::metrics::{score_image, thresholds, ImageScores, N_THRESHOLDS};

/// Ground-truth PNGs are binarized at this gray level.
pub const GT_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub pred: Array2<f64>,
    pub gt: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlagKind {
    /// Excluded from F-measure and PR averages.
    EmptyGroundTruth,
    /// Prediction was bilinearly resized to the ground-truth size.
    Resized { from: (usize, usize), to: (usize, usize) },
    /// No image had foreground, so F-measure is reported as 0.
    NoForegroundImages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub image: String,
    #[serde(flatten)]
    pub kind: FlagKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "S")]
    pub s_measure: f64,
    #[serde(rename = "meanF")]
    pub mean_f: f64,
    #[serde(rename = "maxF")]
    pub max_f: f64,
    #[serde(rename = "E")]
    pub e_measure: f64,
    #[serde(rename = "MAE")]
    pub mae: f64,
    pub n_images: usize,
    /// Images that entered the F-measure and PR averages.
    pub n_scored_f: usize,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

impl MetricReport {
    /// `(S, meanF, maxF, E, MAE)`.
    pub fn vector(&self) -> [f64; 5] {
        [self.s_measure, self.mean_f, self.max_f, self.e_measure, self.mae]
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| EvalError::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| EvalError::io(path, std::io::Error::other(e)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PrRow {
    threshold: f64,
    precision: f64,
    recall: f64,
}

impl PRCurve {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |source| EvalError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for k in 0..self.thresholds.len() {
            w.serialize(PrRow {
                threshold: self.thresholds[k],
                precision: self.precision[k],
                recall: self.recall[k],
            })
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| EvalError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let csv_err = |source| EvalError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut curve = PRCurve {
            thresholds: Vec::new(),
            precision: Vec::new(),
            recall: Vec::new(),
        };
        for row in r.deserialize() {
            let row: PrRow = row.map_err(csv_err)?;
            curve.thresholds.push(row.threshold);
            curve.precision.push(row.precision);
            curve.recall.push(row.recall);
        }
        Ok(curve)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub pr: PRCurve,
}

fn score_all(preds: &[ArrayView2<f64>], gts: &[&BinaryMask]) -> Result<Vec<ImageScores>> {
    if preds.len() != gts.len() {
        return Err(EvalError::Length {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    // Ordered collect: aggregation below sums in dataset order.
    (0..preds.len())
        .into_par_iter()
        .map(|i| score_image(preds[i], gts[i]))
        .collect()
}

/// Dataset-mean precision, recall and F per threshold, and the number of
/// images that entered the means.
fn sweep_means(scores: &[ImageScores]) -> (Vec<f64>, Vec<f64>, Vec<f64>, usize) {
    let mut p = vec![0.0; N_THRESHOLDS];
    let mut r = vec![0.0; N_THRESHOLDS];
    let mut f = vec![0.0; N_THRESHOLDS];
    let mut used = 0usize;
    for sweep in scores.iter().filter_map(|s| s.sweep.as_ref()) {
        used += 1;
        for (k, prf) in sweep.iter().enumerate() {
            p[k] += prf.precision;
            r[k] += prf.recall;
            f[k] += prf.f;
        }
    }
    if used > 0 {
        for v in p.iter_mut().chain(r.iter_mut()).chain(f.iter_mut()) {
            *v /= used as f64;
        }
    }
    (p, r, f, used)
}

fn aggregate(names: &[&str], scores: &[ImageScores], mut flags: Vec<Flag>) -> Evaluation {
    let n = scores.len() as f64;
    let mean = |get: fn(&ImageScores) -> f64| scores.iter().map(get).sum::<f64>() / n;
    let (p, r, f, used) = sweep_means(scores);
    for (name, s) in names.iter().zip(scores) {
        if s.sweep.is_none() {
            flags.push(Flag {
                image: name.to_string(),
                kind: FlagKind::EmptyGroundTruth,
            });
        }
    }
    if used == 0 {
        flags.push(Flag {
            image: "*".into(),
            kind: FlagKind::NoForegroundImages,
        });
    }
    let report = MetricReport {
        s_measure: mean(|s| s.s),
        mean_f: f.iter().sum::<f64>() / N_THRESHOLDS as f64,
        max_f: f.iter().copied().fold(0.0, f64::max),
        e_measure: mean(|s| s.e),
        mae: mean(|s| s.mae),
        n_images: scores.len(),
        n_scored_f: used,
        flags,
    };
    Evaluation {
        report,
        pr: PRCurve {
            thresholds: thresholds(),
            precision: p,
            recall: r,
        },
    }
}

fn views<'a>(preds: &'a [Array2<f64>], gts: &'a [BinaryMask]) -> (Vec<ArrayView2<'a, f64>>, Vec<&'a BinaryMask>) {
    (preds.iter().map(|p| p.view()).collect(), gts.iter().collect())
}

/// `(meanF, maxF)` over the threshold sweep.
pub fn mean_max_f(preds: &[Array2<f64>], gts: &[BinaryMask]) -> Result<(f64, f64)> {
    let (p, g) = views(preds, gts);
    let scores = score_all(&p, &g)?;
    let (_, _, f, _) = sweep_means(&scores);
    Ok((
        f.iter().sum::<f64>() / N_THRESHOLDS as f64,
        f.iter().copied().fold(0.0, f64::max),
    ))
}

/// Dataset mean of the per-image sweep-mean enhanced-alignment score.
pub fn e_measure(preds: &[Array2<f64>], gts: &[BinaryMask]) -> Result<f64> {
    let (p, g) = views(preds, gts);
    let scores = score_all(&p, &g)?;
    Ok(scores.iter().map(|s| s.e).sum::<f64>() / scores.len() as f64)
}

pub fn pr_curve(preds: &[Array2<f64>], gts: &[BinaryMask]) -> Result<PRCurve> {
    let (p, g) = views(preds, gts);
    let scores = score_all(&p, &g)?;
    let (precision, recall, _, _) = sweep_means(&scores);
    Ok(PRCurve {
        thresholds: thresholds(),
        precision,
        recall,
    })
}

pub fn evaluate(samples: &[Sample]) -> Result<Evaluation> {
    evaluate_flagged(samples, Vec::new())
}

fn evaluate_flagged(samples: &[Sample], flags: Vec<Flag>) -> Result<Evaluation> {
    let preds: Vec<_> = samples.iter().map(|s| s.pred.view()).collect();
    let gts: Vec<_> = samples.iter().map(|s| &s.gt).collect();
    let names: Vec<_> = samples.iter().map(|s| s.name.as_str()).collect();
    let scores = score_all(&preds, &gts)?;
    Ok(aggregate(&names, &scores, flags))
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).map_err(|e| EvalError::io(dir, e))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| EvalError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.insert(name.to_string());
            }
        }
    }
    Ok(names)
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let gray = read_gray(path)?;
    let (h, w) = gray.dim();
    Ok(BinaryMask::from_fn(h, w, |r, c| {
        (gray[(r, c)] * 255.0).round() >= GT_THRESHOLD as f64
    }))
}

/// Loads prediction/ground-truth pairs matched by file name. Every PNG in
/// either directory needs a counterpart in the other.
pub fn load_pairs(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>) -> Result<(Vec<Sample>, Vec<Flag>)> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let gt_names = png_names(gt_dir)?;
    let pred_names = png_names(pred_dir)?;
    if let Some(name) = gt_names.difference(&pred_names).next() {
        return Err(EvalError::MissingCounterpart(pred_dir.join(name)));
    }
    if let Some(name) = pred_names.difference(&gt_names).next() {
        return Err(EvalError::MissingCounterpart(gt_dir.join(name)));
    }
    if gt_names.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let names: Vec<&String> = gt_names.iter().collect();
    let loaded: Vec<(Sample, Option<Flag>)> = names
        .par_iter()
        .map(|name| {
            let gt = read_ground_truth(gt_dir.join(name))?;
            let raw = read_gray(pred_dir.join(name))?;
            let stem = name.trim_end_matches(".png").to_string();
            let (from, to) = (raw.dim(), gt.shape());
            let (pred, flag) = if from == to {
                (raw, None)
            } else {
                let resized = resize_bilinear(raw.view(), to.0, to.1).mapv(|v| v.clamp(0.0, 1.0));
                let flag = Flag {
                    image: stem.clone(),
                    kind: FlagKind::Resized { from, to },
                };
                (resized, Some(flag))
            };
            Ok((Sample { name: stem, pred, gt }, flag))
        })
        .collect::<Result<_>>()?;
    let mut flags = Vec::new();
    let mut samples = Vec::with_capacity(loaded.len());
    for (s, f) in loaded {
        samples.push(s);
        flags.extend(f);
    }
    Ok((samples, flags))
}

pub fn evaluate_dataset(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>) -> Result<Evaluation> {
    let (samples, flags) = load_pairs(pred_dir, gt_dir)?;
    evaluate_flagged(&samples, flags)
}

/// Writes `report.json`-style output plus `<stem>_pr.csv` and `<stem>_pr.svg`
/// next to it; returns the paths written.
pub fn write_evaluation(eval: &Evaluation, report_path: impl AsRef<Path>, label: &str) -> Result<Vec<PathBuf>> {
    let report_path = report_path.as_ref();
    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    }
    let stem = report_path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let csv_path = report_path.with_file_name(format!("{stem}_pr.csv"));
    let svg_path = report_path.with_file_name(format!("{stem}_pr.svg"));
    eval.report.write_json(report_path)?;
    eval.pr.write_csv(&csv_path)?;
    fs::write(&svg_path, pr_plot_svg(&[(label, &eval.pr)])).map_err(|e| EvalError::io(&svg_path, e))?;
    Ok(vec![report_path.to_path_buf(), csv_path, svg_path])
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Precision (y) against recall (x), one polyline per labelled curve.
pub fn pr_plot_svg(curves: &[(&str, &PRCurve)]) -> String {
    let (w, h, m) = (480.0, 400.0, 50.0);
    let (pw, ph) = (w - 2.0 * m, h - 2.0 * m);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{m}" y="{m}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let x = m + v * pw;
        let y = m + ph - v * ph;
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{}" text-anchor="middle">{v:.1}</text>"#,
            h - m + 16.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#,
            m - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">Recall</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">Precision</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = curve
            .recall
            .iter()
            .zip(&curve.precision)
            .map(|(r, p)| format!("{:.2},{:.2}", m + r * pw, m + ph - p * ph))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = m + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            m + 10.0,
            m + 30.0,
            m + 36.0,
            ly + 4.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
