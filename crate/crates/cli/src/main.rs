use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use renet_cli::ablate::{ablate, format_table};
use renet_cli::commands::{all_cases, infer, repr_dump, run_case};
use renet_cli::config::{parse_overrides, ModelConfig};
use renet_cli::dataset::{generate_dataset, split_dir, Dataset, GenOptions, NIGHT_SPLIT, VAL_SPLIT};
use renet_cli::error::{CliError, Result};
use renet_cli::evaluate::{evaluate_model, find_run_config, load_model, write_text, Metrics};
use renet_cli::train::{train, TrainOptions};
use renet_events::scenegen::generate_sequence;
use renet_events::{Illumination, SceneConfig};

#[derive(Parser)]
#[command(name = "renet", version, about = "RGB-event moving object detection at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Model config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train, val and night splits) or a single sequence.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Generate one sequence from this scene config instead of a dataset.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        train_seqs: usize,
        #[arg(long, default_value_t = 10)]
        val_seqs: usize,
        #[arg(long, default_value_t = 10)]
        night_seqs: usize,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        #[arg(long, default_value_t = 96)]
        size: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the three event-range frames of a sequence as PGM images.
    ReprDump {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only this frame id.
        #[arg(long)]
        frame: Option<u64>,
    },
    /// Train a model; writes checkpoints, config.cfg and manifest.json into --out.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use only the first N training samples.
        #[arg(long)]
        max_train: Option<usize>,
        /// Skip per-epoch validation.
        #[arg(long)]
        no_val: bool,
    },
    /// Frame mAP of a checkpoint on a held-out split, as JSON.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split directory below --data (default `val`, or `night` with --illum night).
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value = "day")]
        illum: String,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Also write the JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection CSVs and PPM overlays for every sequence in --data.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the six ablation variants.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Finite-difference gradient checks of every operator and composite block.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Only cases whose name contains this.
        #[arg(long)]
        case: Option<String>,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// The config from `--config` (or `fallback`), with `--set` overrides, plus the raw file text.
fn load_config(args: &ConfigArgs, fallback: Option<PathBuf>) -> Result<(ModelConfig, Option<String>)> {
    let source = match args.config.clone().or(fallback) {
        Some(p) => Some(read_text(&p)?),
        None => None,
    };
    let overrides = parse_overrides(&args.set)?;
    let cfg = ModelConfig::from_text_with_overrides(source.as_deref().unwrap_or(""), &overrides)?;
    Ok((cfg, source))
}

fn say(line: &str) {
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { out, scene: Some(scene), .. } => {
            let cfg = SceneConfig::from_kv_text(&read_text(&scene)?).map_err(|e| CliError::Config(e.to_string()))?;
            generate_sequence(&cfg, &out).map_err(|e| CliError::data(&out, e))?;
            say(&format!("wrote {} frames to {}", cfg.n_frames, out.display()));
        }
        Command::Gen { out, scene: None, train_seqs, val_seqs, night_seqs, frames, size, seed } => {
            let opts = GenOptions {
                train_sequences: train_seqs,
                val_sequences: val_seqs,
                night_sequences: night_seqs,
                frames_per_sequence: frames,
                size,
                seed,
            };
            let n = generate_dataset(&opts, &out)?;
            say(&format!("wrote {n} frames to {}", out.display()));
        }
        Command::ReprDump { seq, out, frame } => {
            let n = repr_dump(&seq, frame, &out)?;
            say(&format!("wrote {n} images to {}", out.display()));
        }
        Command::Train { config, data, out, max_train, no_val } => {
            let (cfg, source) = load_config(&config, None)?;
            let opts =
                TrainOptions { data_dir: data, out_dir: out.clone(), config_source: source, overrides: config.set, max_train, no_val };
            let m = train(&cfg, &opts, &mut |l| say(l))?;
            say(&format!("final checkpoint {}", out.join(m.final_checkpoint().unwrap_or_default()).display()));
        }
        Command::Eval { config, checkpoint, data, split, illum, tau, out } => {
            let (cfg, _) = load_config(&config, find_run_config(&checkpoint))?;
            let illum: Illumination = illum.parse().map_err(CliError::Config)?;
            let dir = match (&split, illum) {
                (Some(s), _) => data.join(s),
                (None, Illumination::Night) => {
                    split_dir(&data, NIGHT_SPLIT).ok_or_else(|| CliError::data(&data, "no `night` split"))?
                }
                (None, Illumination::Day) => split_dir(&data, VAL_SPLIT).unwrap_or(data.clone()),
            };
            let dataset = Dataset::load(&dir)?;
            let (model, mut store) = load_model(&cfg, &checkpoint)?;
            let outcome = evaluate_model(&model, &mut store, &cfg, &dataset, tau)?;
            let json = Metrics::new(&outcome, &dir, &checkpoint, &cfg, dataset.len()).to_json();
            if let Some(p) = out {
                write_text(&p, &json)?;
            }
            println!("{json}");
        }
        Command::Infer { config, checkpoint, data, out } => {
            let (cfg, _) = load_config(&config, find_run_config(&checkpoint))?;
            let n = infer(&cfg, &checkpoint, &data, &out)?;
            say(&format!("wrote {n} overlays to {}", out.display()));
        }
        Command::Ablate { config, data, out, seeds } => {
            let (cfg, _) = load_config(&config, None)?;
            let rows = ablate(&cfg, &data, &out, &seeds, &mut |l| say(l))?;
            print!("{}", format_table(&rows));
        }
        Command::Gradcheck { seeds, tol, case } => {
            let mut failed = 0;
            for c in all_cases().iter().filter(|c| case.as_deref().is_none_or(|n| c.name.contains(n))) {
                let s = run_case(c, seeds, tol)?;
                println!(
                    "{:<28} {} {}/{} seeds, max rel err {:.2e}, {} checked, {} excluded, {} below resolution",
                    s.name,
                    if s.pass() { "ok  " } else { "FAIL" },
                    s.passed,
                    s.seeds,
                    s.max_rel_error,
                    s.checked,
                    s.excluded,
                    s.below_resolution
                );
                failed += !s.pass() as usize;
            }
            if failed > 0 {
                return Err(CliError::GradCheck(format!("{failed} cases")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
