//! Command-line driver: dataset synthesis, band selection diagnostics,
//! training, prediction and evaluation from one JSON configuration.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numerical failure.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "ecdbs",
    version,
    about = "Hyperspectral change detection with learned band selection"
)]
pub struct Cli {
    /// JSON configuration file; omitted fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream (overrides the configuration).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Checkpoint to read; defaults to <out>/model.ecdb for predict and evaluate.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Override one configuration field, e.g. `--set train.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Write a synthetic bi-temporal scene with known informative bands.
    Synth,
    /// Cluster the bands of the difference image and report them.
    SelectBands,
    /// Train a model and write the best checkpoint and training logs.
    Train,
    /// Write a change map for every pixel.
    Predict,
    /// Report metrics over the labelled test split.
    Evaluate,
}

impl Cli {
    /// File, then `--set` overrides, then dedicated flags.
    pub fn effective_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }

    pub fn execute(&self) -> Result<(), CliError> {
        let cfg = self.effective_config()?;
        let checkpoint = self.checkpoint.as_deref();
        match self.command {
            Command::Synth => commands::synth(&cfg),
            Command::SelectBands => commands::select_bands(&cfg, checkpoint),
            Command::Train => commands::train_cmd(&cfg),
            Command::Predict => commands::predict(&cfg, checkpoint),
            Command::Evaluate => commands::evaluate_cmd(&cfg, checkpoint),
        }
    }
}

/// Parses arguments, runs the subcommand and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            ExitCode::from(e.exit_code())
        }
    }
}
