//! Benchmark metrics for salient object detection.
//!
//! Per-image scores live in [`metrics`]; [`dataset`] aggregates them over a
//! directory pair or an in-memory list and writes the report, the PR table
//! and a PR plot.

pub mod dataset;
pub mod error;
pub mod metrics;

pub use dataset::{
    e_measure, evaluate, evaluate_dataset, load_pairs, mean_max_f, pr_curve, pr_plot_svg, read_ground_truth,
    write_evaluation, Evaluation, Flag, FlagKind, MetricReport, PRCurve, Sample, GT_THRESHOLD,
};
pub use error::{EvalError, Result};
pub use metrics::{
    confusion_at, confusion_sweep, e_measure_at, f_measure_at, image_e_measure, mae, s_measure, score_image,
    thresholds, Confusion, ImageScores, Prf, ALPHA, BETA2, N_THRESHOLDS,
};
