//! `vmbeam` harness: corpus simulation, training, evaluation and reports
//! driven by a single TOML run file.

mod error;

pub mod commands;
pub mod config;
pub mod corpus;
pub mod report;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use vmbeam_model::config::Ablation;

pub use error::{CliError, Result};

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "VMBEAM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "vmbeam", version, about = "Virtual-microphone beamforming experiments")]
pub struct Cli {
    /// Worker threads for data-parallel stages (falls back to VMBEAM_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the scene corpus and its manifest.
    Simulate(RunArgs),
    /// Train the models of the configured pipeline, resuming when possible.
    Train(TrainArgs),
    /// Score every evaluation scene under every pipeline.
    Evaluate(EvalArgs),
    /// Compare metric CSVs in one table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output root, overriding the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run seed, overriding the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs instead of refusing or resuming.
    #[arg(long)]
    pub force: bool,
    /// Apply a named ablation (w/o-vm-loss, w/o-vm-signals, w/o-gan, w/o-selection, w/o-dca).
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Stop once this many steps are complete; a later run resumes.
    #[arg(long)]
    pub stop_at: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Only the built-in unprocessed and oracle rows; no checkpoints needed.
    #[arg(long)]
    pub oracle_only: bool,
    /// Checkpoint for the trained pipeline instead of its latest one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Metric CSVs written by `evaluate`.
    #[arg(required = true)]
    pub csv: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    /// Config whose means are subtracted in the delta columns.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Seed of the bootstrap intervals.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    Ablation::parse(s).map_err(|e| e.to_string())
}

/// Resolves the worker count from the flag or the environment and sizes
/// the global pool. A pool that already exists is left as is.
pub fn configure_threads(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Config(format!("{THREADS_ENV}='{v}' is not a thread count")))?,
            ),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(n)
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, out),
        Command::Train(a) => commands::train(&a, out),
        Command::Evaluate(a) => commands::evaluate(&a, out),
        Command::Report(a) => commands::report(&a, out),
    }
}
