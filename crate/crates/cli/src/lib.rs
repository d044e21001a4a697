//! Command-line driver: synthetic data, splits, training, evaluation,
//! threshold tuning, workflow simulation and reports over one run directory.
//!
//! Every command reads upstream artifacts from `--input` (default: `--out`),
//! writes its outputs atomically under `--out`, and records a manifest in
//! `--out/manifests/`. Failures print one JSON line on stderr and exit with
//! 2 (config or validation), 3 (missing artifact) or 4 (numeric failure).

pub mod cmd;
pub mod config;
pub mod data;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use data::Task;
pub use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small model and short schedules for a single CPU core.
    Desk,
    /// Full-size model and schedules.
    Paper,
}

#[derive(Debug, Parser)]
#[command(
    name = "spitzkit",
    version,
    about = "Spitz tumor MIL classification and ancillary-testing simulation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON config document for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; every random stream of the command derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory that receives outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Directory holding upstream artifacts (defaults to --out).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic cohort and its feature bags.
    Synth,
    /// Patient-level stratified split into folds and a test set.
    Split,
    /// Train one cross-validation fold.
    Train {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        fold: usize,
    },
    /// Score the fold ensemble and baselines on the test set.
    Evaluate {
        #[arg(long, value_enum)]
        task: Task,
    },
    /// Tune per-fold decision thresholds of a binary task on validation folds.
    TuneThreshold {
        #[arg(long, value_enum)]
        task: Task,
    },
    /// Monte Carlo simulation of ancillary-testing workflows.
    Simulate,
    /// Significance tests and a Markdown summary of the evaluation outputs.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Split => "split",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::TuneThreshold { .. } => "tune-threshold",
            Command::Simulate => "simulate",
            Command::Report => "report",
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let config = config::load(g.config.as_deref())?;
    let input = g.input.clone().unwrap_or_else(|| g.out.clone());
    let run = io::Run::new(
        cli.command.name(),
        g.out.clone(),
        input,
        g.profile,
        g.seed.unwrap_or(0),
        g.config.clone(),
    );
    match cli.command {
        Command::Synth => cmd::synth::run(run, &config, g.seed),
        Command::Split => cmd::split::run(run, &config),
        Command::Train { task, fold } => cmd::train::run(run, &config, task, fold),
        Command::Evaluate { task } => cmd::evaluate::run(run, &config, task),
        Command::TuneThreshold { task } => cmd::threshold::run(run, &config, task),
        Command::Simulate => cmd::simulate::run(run, &config, g.seed),
        Command::Report => cmd::report::run(run, &config),
    }
}
