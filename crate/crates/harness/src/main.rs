use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sodkit_annotate::datasetkit::{
    assign_categories_from_phrases, build_manifest, category_stats, emit_distribution_report, read_accept_list,
    sample_candidates, split_manifest, write_accept_list, PoolIndex,
};
use sodkit_annotate::labelgen::{run_pipeline, Backends, MockGrounder, MockSegmenter, PipelineConfig};
use sodkit_annotate::phrasekit::{export_finetune_set, read_phrase_file, MockCaptioner};
use sodkit_core::synth::write_dataset;
use sodkit_core::{read_manifest, write_manifest, SourcePool, Split};
use sodkit_eval::{evaluate_dataset, write_evaluation};
use sodkit_harness::ablation::{run_ablation, AblationInputs, Preset, TestSet};
use sodkit_harness::{load_checkpoint, predict_dir, report, train, TrainConfig};

#[derive(Parser)]
#[command(name = "sodkit", version, about = "Salient object detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    /// Deterministic stand-ins that work on the synthetic shapes set.
    Mock,
    /// External foundation models (none are bundled).
    Real,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigPreset {
    Paper,
    Toy,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic shapes dataset (images, masks, manifest, captions).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Generate pseudo-labels: captioner, grounder, segmenter, mask union.
    Pseudolabel {
        #[arg(long)]
        manifest: PathBuf,
        /// Caption table used by the mock captioner.
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Box confidence cut-off; defaults to 0 for mock backends.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        no_adjectives: bool,
        #[arg(long, value_enum, default_value = "mock")]
        backend: Backend,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Category statistics and distribution plots of a manifest.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Phrase file used to fill missing categories.
        #[arg(long)]
        phrases: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded train/test split; writes train.jsonl and test.jsonl.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a manifest from source pools and a curator accept list.
    BuildManifest {
        /// `<pool>=<dir or index.jsonl>`, repeatable.
        #[arg(long = "pool", required = true)]
        pools: Vec<String>,
        #[arg(long)]
        accept: Option<PathBuf>,
        /// Instead of building, write this many seeded candidates to review.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample captioner fine-tuning pairs from manual annotations.
    ExportFinetune {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        phrases: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a training config file.
    InitConfig {
        #[arg(long, value_enum, default_value = "paper")]
        preset: ConfigPreset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the saliency model on pseudo-labels.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum, default_value = "on")]
        edge_decoder: OnOff,
        #[arg(long)]
        out: PathBuf,
    },
    /// Saliency maps for every image of a directory.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the input size stored in the checkpoint.
        #[arg(long)]
        input_size: Option<usize>,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Comparison table over report files.
    Report {
        /// Comma-separated report.json paths.
        #[arg(long = "in", value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-arm ablation: adjectives, dataset or decoder.
    Ablation {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        manifest_b: Option<PathBuf>,
        #[arg(long)]
        labels_b: Option<PathBuf>,
        #[arg(long)]
        test_images: PathBuf,
        #[arg(long)]
        test_gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("arm").to_string()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth {
            out,
            n,
            size,
            seed,
            split,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let ds = write_dataset(&out, n, size, seed, split)?;
            println!("wrote {} images to {}", ds.records.len(), out.display());
        }
        Command::Pseudolabel {
            manifest,
            captions,
            out,
            tau,
            no_adjectives,
            backend,
            seed,
        } => {
            if let Backend::Real = backend {
                bail!(
                    "real backend not configured: no captioner, grounder or segmenter models are bundled; \
                     implement the backend traits and wire them in, or use --backend mock"
                );
            }
            let records = read_manifest(&manifest)?;
            let captions = captions.context("--captions is required for the mock captioner")?;
            let captioner = MockCaptioner::from_file(&captions)?;
            let backends = Backends {
                captioner: &captioner,
                grounder: &MockGrounder,
                segmenter: &MockSegmenter::default(),
            };
            let mut cfg = PipelineConfig::new(&out);
            cfg.tau = tau.unwrap_or(0.0);
            cfg.adjectives = !no_adjectives;
            cfg.seed = seed;
            let report = run_pipeline(&records, &backends, &cfg)?;
            println!(
                "{} ok, {} empty, {} failed",
                report.count(sodkit_annotate::labelgen::ImageStatus::Ok),
                report.count(sodkit_annotate::labelgen::ImageStatus::Empty),
                report.count(sodkit_annotate::labelgen::ImageStatus::Failed)
            );
            if !report.acceptable() {
                eprintln!(
                    "more than 10% of images failed; see {}",
                    out.join("report.jsonl").display()
                );
                return Ok(false);
            }
        }
        Command::Stats { manifest, phrases, out } => {
            let mut records = read_manifest(&manifest)?;
            if let Some(p) = phrases {
                assign_categories_from_phrases(&mut records, &read_phrase_file(p)?);
            }
            let stats = category_stats(&records);
            for p in emit_distribution_report(&stats, &out)? {
                println!("{}", p.display());
            }
            println!(
                "{} images, {} parent categories, {} subcategories",
                stats.n_images, stats.n_parents, stats.n_subs
            );
        }
        Command::Split {
            manifest,
            ratio,
            seed,
            out,
        } => {
            let records = read_manifest(&manifest)?;
            let (train, test) = split_manifest(&records, ratio, seed)?;
            fs::create_dir_all(&out)?;
            write_manifest(out.join("train.jsonl"), &train)?;
            write_manifest(out.join("test.jsonl"), &test)?;
            println!("{} train, {} test", train.len(), test.len());
        }
        Command::BuildManifest {
            pools,
            accept,
            sample,
            seed,
            out,
        } => {
            let mut indexes = Vec::new();
            for spec in &pools {
                let (name, path) = spec
                    .split_once('=')
                    .with_context(|| format!("--pool expects <pool>=<path>, got `{spec}`"))?;
                let pool: SourcePool = name.parse()?;
                let path = PathBuf::from(path);
                indexes.push(if path.is_dir() {
                    PoolIndex::ingest_dir(pool, &path)?
                } else {
                    PoolIndex::from_index_file(pool, &path)?
                });
            }
            if let Some(n) = sample {
                let refs = sample_candidates(&indexes, n, seed);
                write_accept_list(&out, &refs)?;
                println!("wrote {} candidates to {}", refs.len(), out.display());
            } else {
                let accept = accept.context("--accept is required unless --sample is given")?;
                let built = build_manifest(&indexes, seed, &read_accept_list(&accept)?)?;
                write_manifest(&out, &built.records)?;
                println!("wrote {} records to {}", built.records.len(), out.display());
            }
        }
        Command::ExportFinetune {
            manifest,
            phrases,
            fraction,
            seed,
            out,
        } => {
            let records = read_manifest(&manifest)?;
            let corpus = export_finetune_set(&records, &read_phrase_file(&phrases)?, fraction, seed)?;
            corpus.write_tsv(&out)?;
            println!("wrote {} pairs to {}", corpus.pairs.len(), out.display());
        }
        Command::InitConfig { preset, out } => {
            let cfg = match preset {
                ConfigPreset::Paper => TrainConfig::default(),
                ConfigPreset::Toy => TrainConfig::toy(),
            };
            fs::write(&out, cfg.to_flat_string())?;
        }
        Command::Train {
            config,
            manifest,
            labels,
            edge_decoder,
            out,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let records = read_manifest(&manifest)?;
            let outcome = train(&cfg, &records, &labels, matches!(edge_decoder, OnOff::On), &out)?;
            let (first, last) = sodkit_harness::loss_endpoints(&outcome.log, sodkit_harness::LOSS_WINDOW);
            println!(
                "{} iterations, loss {first:.4} -> {last:.4}; checkpoint {}",
                outcome.log.len(),
                outcome.final_checkpoint.display()
            );
        }
        Command::Predict {
            ckpt,
            images,
            out,
            input_size,
        } => {
            let (model, size) = load_checkpoint(&ckpt)?;
            let written = predict_dir(&model, &images, &out, input_size.unwrap_or(size))?;
            println!("wrote {} maps to {}", written.len(), out.display());
        }
        Command::Eval { pred, gt, out } => {
            let ev = evaluate_dataset(&pred, &gt)?;
            write_evaluation(&ev, &out, &stem(&pred))?;
            let r = &ev.report;
            println!(
                "S {:.4}  meanF {:.4}  maxF {:.4}  E {:.4}  MAE {:.4}  ({} images, {} flags)",
                r.s_measure,
                r.mean_f,
                r.max_f,
                r.e_measure,
                r.mae,
                r.n_images,
                r.flags.len()
            );
        }
        Command::Report { inputs, out } => {
            for p in report(&inputs, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Ablation {
            preset,
            config,
            manifest,
            labels,
            manifest_b,
            labels_b,
            test_images,
            test_gt,
            out,
        } => {
            let preset: Preset = preset.parse()?;
            let cfg = TrainConfig::load(&config)?;
            let names = manifest_b.as_ref().map(|b| (stem(&manifest), stem(b)));
            let inputs = AblationInputs {
                manifest: read_manifest(&manifest)?,
                labels,
                manifest_b: manifest_b.map(read_manifest).transpose()?,
                labels_b,
                names,
            };
            let test = TestSet {
                images: test_images,
                gt: test_gt,
            };
            let result = run_ablation(preset, &cfg, &inputs, &test, &out)?;
            print!("{}", result.to_markdown()?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
