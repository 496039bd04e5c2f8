//! Experiment harness for sodkit: training configuration and schedule, the
//! training loop, inference, comparison reports and two-arm ablations. The
//! `sodkit` binary exposes these together with the annotation and
//! evaluation tooling.

pub mod ablation;
pub mod config;
pub mod data;
pub mod error;
pub mod optim;
pub mod predict;
pub mod report;
pub mod schedule;
pub mod train;

pub use ablation::{run_ablation, AblationInputs, AblationResult, Preset, TestSet};
pub use config::TrainConfig;
pub use error::{HarnessError, Result};
pub use predict::{load_checkpoint, predict_dir, predict_image};
pub use report::{build_table, report, ReportRow, Table};
pub use schedule::Schedule;
pub use train::{loss_endpoints, read_log, train, LogEntry, TrainOutcome, LOSS_WINDOW};
