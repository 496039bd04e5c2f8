//! Two-arm ablations with a shared seed and budget: phrase adjectives on or
//! off, training set A or B, and the edge decoder on or off.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sodkit_core::ImageRecord;
use sodkit_eval::{evaluate_dataset, write_evaluation, MetricReport};

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::predict::predict_dir;
use crate::report::{build_table, ReportRow, Table};
use crate::train::{train, LogEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Adjectives,
    Dataset,
    Decoder,
}

impl FromStr for Preset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjectives" => Ok(Preset::Adjectives),
            "dataset" => Ok(Preset::Dataset),
            "decoder" => Ok(Preset::Decoder),
            other => Err(HarnessError::UnknownPreset(other.to_string())),
        }
    }
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Adjectives => "adjectives",
            Preset::Dataset => "dataset",
            Preset::Decoder => "decoder",
        }
    }
}

/// Everything a preset may draw its two arms from. `*_b` inputs feed the
/// second arm and are required by the presets that vary them.
#[derive(Debug, Clone)]
pub struct AblationInputs {
    pub manifest: Vec<ImageRecord>,
    pub labels: PathBuf,
    pub manifest_b: Option<Vec<ImageRecord>>,
    pub labels_b: Option<PathBuf>,
    /// Row names for the dataset preset.
    pub names: Option<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct Arm {
    pub name: String,
    pub manifest: Vec<ImageRecord>,
    pub labels: PathBuf,
    pub edge_decoder: bool,
}

/// Held-out images and their ground truth, matched by file stem.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub images: PathBuf,
    pub gt: PathBuf,
}

pub fn arms(preset: Preset, inputs: &AblationInputs) -> Result<[Arm; 2]> {
    let missing = |what: &str| HarnessError::MissingArm {
        preset: preset.as_str().to_string(),
        what: what.to_string(),
    };
    let arm = |name: &str, manifest: &[ImageRecord], labels: &Path, edge: bool| Arm {
        name: name.to_string(),
        manifest: manifest.to_vec(),
        labels: labels.to_path_buf(),
        edge_decoder: edge,
    };
    Ok(match preset {
        Preset::Adjectives => {
            let b = inputs
                .labels_b
                .as_deref()
                .ok_or_else(|| missing("a second label directory (labels without adjectives)"))?;
            [
                arm("w/ adjectives", &inputs.manifest, &inputs.labels, true),
                arm("w/o adjectives", &inputs.manifest, b, true),
            ]
        }
        Preset::Dataset => {
            let mb = inputs
                .manifest_b
                .as_deref()
                .ok_or_else(|| missing("a second manifest"))?;
            let lb = inputs.labels_b.as_deref().unwrap_or(&inputs.labels);
            let (na, nb) = inputs
                .names
                .clone()
                .unwrap_or_else(|| ("dataset A".to_string(), "dataset B".to_string()));
            [arm(&na, &inputs.manifest, &inputs.labels, true), arm(&nb, mb, lb, true)]
        }
        Preset::Decoder => [
            arm("w/ decoder", &inputs.manifest, &inputs.labels, true),
            arm("w/o decoder", &inputs.manifest, &inputs.labels, false),
        ],
    })
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub name: String,
    pub report: MetricReport,
    pub checkpoint: PathBuf,
    pub log: Vec<LogEntry>,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub preset: Preset,
    pub arms: Vec<ArmResult>,
}

impl AblationResult {
    pub fn table(&self) -> Result<Table> {
        let rows: Vec<ReportRow> = self
            .arms
            .iter()
            .map(|a| ReportRow::from_report(&a.name, &a.report))
            .collect();
        build_table(&rows)
    }

    /// Two-row table plus the second-minus-first delta per column.
    pub fn to_markdown(&self) -> Result<String> {
        let table = self.table()?;
        let mut out = table.to_markdown();
        let (a, b) = (&table.rows[0].1, &table.rows[1].1);
        let deltas: Vec<String> = a
            .iter()
            .zip(b)
            .map(|(x, y)| format!("{:+.3}", y.value - x.value))
            .collect();
        let _ = writeln!(out, "| delta | {} |", deltas.join(" | "));
        Ok(out)
    }
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

/// Trains, predicts and evaluates both arms under `out_dir/<arm>/`, then
/// writes `ablation.md` and `ablation.csv`.
pub fn run_ablation(
    preset: Preset,
    cfg: &TrainConfig,
    inputs: &AblationInputs,
    test: &TestSet,
    out_dir: &Path,
) -> Result<AblationResult> {
    let mut results = Vec::with_capacity(2);
    for arm in arms(preset, inputs)? {
        let dir = out_dir.join(slug(&arm.name));
        log::info!("ablation `{}`: training arm `{}`", preset.as_str(), arm.name);
        let outcome = train(cfg, &arm.manifest, &arm.labels, arm.edge_decoder, &dir)?;
        let preds = dir.join("predictions");
        predict_dir(&outcome.model, &test.images, &preds, cfg.input_size)?;
        let eval = evaluate_dataset(&preds, &test.gt)?;
        write_evaluation(&eval, dir.join("report.json"), &arm.name)?;
        results.push(ArmResult {
            name: arm.name,
            report: eval.report,
            checkpoint: outcome.final_checkpoint,
            log: outcome.log,
        });
    }
    let result = AblationResult { preset, arms: results };
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let md = out_dir.join("ablation.md");
    fs::write(&md, result.to_markdown()?).map_err(|e| HarnessError::io(&md, e))?;
    let csv = out_dir.join("ablation.csv");
    fs::write(&csv, result.table()?.to_csv()).map_err(|e| HarnessError::io(&csv, e))?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> AblationInputs {
        AblationInputs {
            manifest: Vec::new(),
            labels: PathBuf::from("labels"),
            manifest_b: None,
            labels_b: None,
            names: None,
        }
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(matches!(
            "texture".parse::<Preset>(),
            Err(HarnessError::UnknownPreset(_))
        ));
        for p in [Preset::Adjectives, Preset::Dataset, Preset::Decoder] {
            assert_eq!(p.as_str().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn arms_per_preset() {
        let [on, off] = arms(Preset::Decoder, &inputs()).unwrap();
        assert!(on.edge_decoder && !off.edge_decoder);
        assert!(matches!(
            arms(Preset::Adjectives, &inputs()),
            Err(HarnessError::MissingArm { .. })
        ));
        assert!(matches!(
            arms(Preset::Dataset, &inputs()),
            Err(HarnessError::MissingArm { .. })
        ));
        let mut i = inputs();
        i.labels_b = Some(PathBuf::from("plain"));
        let [a, b] = arms(Preset::Adjectives, &i).unwrap();
        assert_eq!((a.labels, b.labels), (PathBuf::from("labels"), PathBuf::from("plain")));
    }
}
