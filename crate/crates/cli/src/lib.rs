//! Command-line front end for the exoskeleton controller validation pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "exoval",
    version,
    about = "Train, evaluate and stress-test a learned exoskeleton torque controller"
)]
pub struct Cli {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true, env = "EXOVAL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert raw trial CSVs into the canonical 100 Hz layout.
    Convert {
        raw_dir: PathBuf,
        /// Column map JSON; defaults to `columns` in the config.
        #[arg(long)]
        columns: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with a known torque map.
    Synth {
        /// Dataset spec JSON; defaults to `synth` in the config.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train the controller network on canonical trials.
    Train { trials_dir: PathBuf },
    /// Write normalized commands and scaled torque for each trial.
    Infer {
        trials_dir: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Correlation and power evaluation against ground truth.
    Evaluate {
        trials_dir: PathBuf,
        #[arg(long, required_unless_present = "inject_gt")]
        model: Option<PathBuf>,
        /// Evaluate only ramp trials and tag the run as mismatched.
        #[arg(long)]
        mismatched: bool,
        /// Use ground-truth moments as the prediction.
        #[arg(long)]
        inject_gt: bool,
    },
    /// Inject actuation delays and recompute power.
    DelaySweep {
        trials_dir: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated delays in seconds.
        #[arg(long, value_delimiter = ',')]
        delays: Option<Vec<f64>>,
        /// Feed the injected delay into the network's delay input too.
        #[arg(long)]
        covary_input_delay: bool,
    },
    /// Print the correlation table from a saved evaluation.
    Report { evaluation: PathBuf },
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .resolve(cli.seed);
    let ctx = Context { cfg, out: cli.out };
    match &cli.command {
        Command::Convert { raw_dir, columns } => {
            commands::cmd_convert(&ctx, raw_dir, columns.as_deref())
        }
        Command::Synth { spec } => commands::cmd_synth(&ctx, spec.as_deref()),
        Command::Train { trials_dir } => commands::cmd_train(&ctx, trials_dir),
        Command::Infer { trials_dir, model } => commands::cmd_infer(&ctx, trials_dir, model),
        Command::Evaluate {
            trials_dir,
            model,
            mismatched,
            inject_gt,
        } => commands::cmd_evaluate(&ctx, trials_dir, model.as_deref(), *mismatched, *inject_gt),
        Command::DelaySweep {
            trials_dir,
            model,
            delays,
            covary_input_delay,
        } => commands::cmd_delay_sweep(
            &ctx,
            trials_dir,
            model,
            delays.as_deref(),
            *covary_input_delay,
        ),
        Command::Report { evaluation } => commands::cmd_report(&ctx, evaluation),
    }
}
