//! `aqa` — batch front end for synthetic data generation, training,
//! evaluation, and the three experiment protocols (ablation, size sweep,
//! linear probe).
//!
//! Every subcommand takes an optional JSON config (`--config`) plus repeated
//! dotted-key overrides (`--set key=value`); dedicated flags win over both.
//! Unknown keys fail before any work starts. Exit codes: 0 success, 1 for
//! anything the user can fix (bad flags, malformed inputs, missing files),
//! 2 for failures of the run itself. Inputs are only ever read; writes stay
//! inside `--out` or the run directory.

mod config;
mod datadir;
mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aqa_core::datapipe::{generate_synthetic, PreprocessConfig, SyntheticSpec};
use aqa_core::error::AqaError;
use aqa_core::harness::{
    evaluate, linear_probe, probe_to_csv, run_ablation, run_size_sweep, sweep_to_csv, train,
    ProbeConfig, RunPaths, TrainConfig, TrainOutcome,
};
use aqa_core::mtl::MtlModel;
use aqa_core::Result;

use config::{resolve, AblateSpec, ProbeSpec, SizePreset, SweepSpec, TrainSpec};
use datadir::{load_splits, Split};
use render::Format;

#[derive(Parser)]
#[command(
    name = "aqa",
    version,
    about = "Action quality assessment: multitask training and evaluation on dive-style videos"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every config-driven subcommand.
#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; keys mirror the subcommand's defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set weights.caption=0.05`; repeatable,
    /// applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed override; wins over the config file and `--set`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FormatArg {
    /// Output format for the printed report.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset (frames, annotations, splits).
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of samples; shorthand for `--set sample_count=N`.
        #[arg(long)]
        samples: Option<usize>,
        /// Output dataset directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        format: FormatArg,
    },
    /// Train one model and write a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory (as produced by `synth`).
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Run directory; defaults to runs/train_<arch>_<preset>_seed<seed>.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: FormatArg,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Checkpoint file from a run directory (its sibling config.json
        /// supplies the model configuration).
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        /// Dataset directory.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Which split manifest to evaluate.
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Evaluation batch size; defaults to the training batch size.
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        format: FormatArg,
    },
    /// Train every task arm for every architecture; emit the Spearman grid.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Parent directory for the per-arm run directories and the table.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: FormatArg,
    },
    /// Train single- and multi-task arms across training-set sizes.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: FormatArg,
    },
    /// Ridge-probe pooled trunk activations against the normalized score.
    Probe {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory; its train split fits the probes.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Optional second dataset; probes are then scored on its test split
        /// (out-of-dataset protocol). Defaults to `--data`'s test split.
        #[arg(long, value_name = "DIR")]
        test_data: Option<PathBuf>,
        /// Checkpoint to probe; omitted, a freshly initialized model is used.
        #[arg(long, value_name = "FILE")]
        ckpt: Option<PathBuf>,
        /// Directory for probe.json/probe.csv; omitted, the table is only
        /// printed.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: FormatArg,
    },
}

fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            config,
            samples,
            out,
            format,
        } => {
            let mut spec: SyntheticSpec =
                resolve(SyntheticSpec::new(0, 16), config.config.as_deref(), &config.set)?;
            if let Some(seed) = config.seed {
                spec.seed = seed;
            }
            if let Some(samples) = samples {
                spec.sample_count = samples;
            }
            let generated = generate_synthetic(&spec, &out)?;
            let json = serde_json::to_value(&generated)?;
            render::print(format.format, &json, &render::object_csv(&json));
            Ok(())
        }

        Command::Train {
            config,
            data,
            out,
            format,
        } => {
            let mut spec: TrainSpec =
                resolve(TrainSpec::default(), config.config.as_deref(), &config.set)?;
            if let Some(seed) = config.seed {
                spec.seed = seed;
            }
            let splits = load_splits(&data)?;
            let train_config = spec.to_train_config(splits.vocab.len());
            let run_dir = out.unwrap_or_else(|| {
                default_run_dir(&format!(
                    "train_{}_{}_seed{}",
                    spec.architecture.name(),
                    preset_name(spec.preset),
                    spec.seed
                ))
            });
            let outcome = train(
                &train_config,
                &splits.train,
                &splits.test,
                &splits.vocab,
                &run_dir,
            )?;
            let json = train_summary(&run_dir, &outcome)?;
            render::print(format.format, &json, &render::object_csv(&flatten_summary(&json)));
            Ok(())
        }

        Command::Eval {
            ckpt,
            data,
            split,
            batch_size,
            format,
        } => {
            let (train_config, _) = read_run_config(&ckpt)?;
            let splits = load_splits(&data)?;
            if train_config.model.vocab != splits.vocab.len() {
                return Err(AqaError::Config(format!(
                    "checkpoint was trained with a vocabulary of {}, but {} yields {}; \
                     evaluate against the dataset the model was trained on",
                    train_config.model.vocab,
                    data.display(),
                    splits.vocab.len()
                )));
            }
            let mut model: MtlModel<f32> = MtlModel::new(train_config.model.clone(), 0)?;
            model.load_checkpoint(&ckpt)?;
            let samples = match split {
                Split::Train => &splits.train,
                Split::Test => &splits.test,
            };
            let report = evaluate(
                &mut model,
                samples,
                &PreprocessConfig::for_model(&train_config.model),
                train_config.tasks,
                &splits.vocab,
                batch_size.unwrap_or(train_config.batch_size),
            )?;
            let json = serde_json::to_value(&report)?;
            render::print(format.format, &json, &render::eval_report_csv(&report));
            Ok(())
        }

        Command::Ablate {
            config,
            data,
            out,
            format,
        } => {
            let mut spec: AblateSpec =
                resolve(AblateSpec::default(), config.config.as_deref(), &config.set)?;
            if let Some(seed) = config.seed {
                spec.seed = seed;
            }
            if spec.architectures.is_empty() {
                return Err(AqaError::Config(
                    "ablation needs at least one architecture".into(),
                ));
            }
            let splits = load_splits(&data)?;
            let out_dir =
                out.unwrap_or_else(|| default_run_dir(&format!("ablate_seed{}", spec.seed)));
            let table = run_ablation(
                &spec.base_config(splits.vocab.len()),
                &spec.models(splits.vocab.len()),
                &splits.train,
                &splits.test,
                &splits.vocab,
                &out_dir,
            )?;
            let json = serde_json::to_value(&table)?;
            let csv = table.to_csv();
            fs::write(out_dir.join("ablation.json"), serde_json::to_string_pretty(&json)?)?;
            fs::write(out_dir.join("ablation.csv"), &csv)?;
            render::print(format.format, &json, &csv);
            Ok(())
        }

        Command::Sweep {
            config,
            data,
            out,
            format,
        } => {
            let mut spec: SweepSpec =
                resolve(SweepSpec::default(), config.config.as_deref(), &config.set)?;
            if let Some(seed) = config.seed {
                spec.seed = seed;
            }
            let splits = load_splits(&data)?;
            let out_dir =
                out.unwrap_or_else(|| default_run_dir(&format!("sweep_seed{}", spec.seed)));
            let rows = run_size_sweep(
                &spec.base_config(splits.vocab.len()),
                &spec.sizes,
                &splits.train,
                &splits.test,
                &splits.vocab,
                &out_dir,
            )?;
            let json = serde_json::to_value(&rows)?;
            let csv = sweep_to_csv(&rows);
            fs::write(out_dir.join("sweep.json"), serde_json::to_string_pretty(&json)?)?;
            fs::write(out_dir.join("sweep.csv"), &csv)?;
            render::print(format.format, &json, &csv);
            Ok(())
        }

        Command::Probe {
            config,
            data,
            test_data,
            ckpt,
            out,
            format,
        } => {
            let mut spec: ProbeSpec =
                resolve(ProbeSpec::default(), config.config.as_deref(), &config.set)?;
            if let Some(seed) = config.seed {
                spec.seed = seed;
            }
            let splits = load_splits(&data)?;
            let (model_config, checkpoint) = match &ckpt {
                Some(path) => {
                    let (train_config, _) = read_run_config(path)?;
                    (train_config.model, Some(path.as_path()))
                }
                None => (
                    spec.preset.model(spec.architecture, splits.vocab.len()),
                    None,
                ),
            };
            let mut model: MtlModel<f32> = MtlModel::new(model_config.clone(), spec.seed)?;
            if let Some(path) = checkpoint {
                model.load_checkpoint(path)?;
            }
            let test_samples = match &test_data {
                Some(dir) => load_splits(dir)?.test,
                None => splits.test,
            };
            let rows = linear_probe(
                &mut model,
                &ProbeConfig {
                    layers: spec.layers.clone(),
                    lambda: spec.lambda,
                },
                &splits.train,
                &test_samples,
                &PreprocessConfig::for_model(&model_config),
            )?;
            let json = serde_json::to_value(&rows)?;
            let csv = probe_to_csv(&rows);
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("probe.json"), serde_json::to_string_pretty(&json)?)?;
                fs::write(dir.join("probe.csv"), &csv)?;
            }
            render::print(format.format, &json, &csv);
            Ok(())
        }
    }
}

fn default_run_dir(name: &str) -> PathBuf {
    Path::new("runs").join(name)
}

fn preset_name(preset: SizePreset) -> &'static str {
    match preset {
        SizePreset::Full => "full",
        SizePreset::Tiny => "tiny",
    }
}

/// Reads the training config written beside a checkpoint by the run that
/// produced it.
fn read_run_config(ckpt: &Path) -> Result<(TrainConfig, RunPaths)> {
    if !ckpt.exists() {
        return Err(AqaError::MissingInput(ckpt.to_path_buf()));
    }
    let run_dir = ckpt.parent().unwrap_or_else(|| Path::new("."));
    let paths = RunPaths::new(run_dir);
    if !paths.config.exists() {
        return Err(AqaError::MissingInput(paths.config));
    }
    let config: TrainConfig = serde_json::from_str(&fs::read_to_string(&paths.config)?)
        .map_err(|e| {
            AqaError::Config(format!(
                "{} is not a valid training config: {e}",
                paths.config.display()
            ))
        })?;
    Ok((config, paths))
}

/// A compact stdout summary; the full history lives in the run directory.
fn train_summary(run_dir: &Path, outcome: &TrainOutcome) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "run_dir": run_dir.display().to_string(),
        "epochs_run": outcome.epochs_run,
        "best_epoch": outcome.best_epoch,
        "headline_spearman": outcome.headline_spearman(),
        "final_eval": serde_json::to_value(&outcome.final_eval)?,
        "ckpt_final": outcome.ckpt_final.display().to_string(),
    }))
}

/// The summary with its nested report inlined, for key,value rendering.
fn flatten_summary(summary: &serde_json::Value) -> serde_json::Value {
    let mut flat = serde_json::Map::new();
    if let Some(map) = summary.as_object() {
        for (key, value) in map {
            match value.as_object() {
                Some(inner) => {
                    for (k, v) in inner {
                        flat.insert(format!("{key}.{k}"), v.clone());
                    }
                }
                None => {
                    flat.insert(key.clone(), value.clone());
                }
            }
        }
    }
    serde_json::Value::Object(flat)
}
