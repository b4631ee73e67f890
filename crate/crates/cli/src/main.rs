//! `soilml` — soil nutrient regression pipeline, one subcommand per stage.
//!
//! Stages chain through an output directory: each reads its predecessor's
//! files and manifest and writes its own. `soilml synth` (or `ingest`)
//! starts a run; `report` finishes it under `<out>/reports/`.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "soilml", version, about = "Soil nutrient regression pipeline")]
struct Cli {
    /// TOML run configuration; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores; 1 = bit-reproducible); overrides the
    /// config file.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory shared by all stages of a run.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic spatially autocorrelated dataset.
    Synth,
    /// Read soil/patch/weather/yield/embedding sources into feature tables.
    Ingest,
    /// Impute below-detection values, normalize, correlation analysis.
    Preprocess,
    /// Build the train/test split plan (single or spatial grid).
    Split,
    /// Random-search hyperparameter study for the configured model family.
    Tune,
    /// Fit the best configuration on the full training partition.
    Train,
    /// Score the trained model on the held-out test partition.
    Evaluate,
    /// Render performance tables, importance charts and heatmaps.
    Report,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .ok(); // already-initialized pool is fine in-process

    let out = cli.out.as_path();
    match cli.command {
        Command::Synth => stages::cmd_synth(&cfg, out),
        Command::Ingest => stages::cmd_ingest(&cfg, out),
        Command::Preprocess => stages::cmd_preprocess(&cfg, out),
        Command::Split => stages::cmd_split(&cfg, out),
        Command::Tune => stages::cmd_tune(&cfg, out),
        Command::Train => stages::cmd_train(&cfg, out),
        Command::Evaluate => stages::cmd_evaluate(&cfg, out),
        Command::Report => stages::cmd_report(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
