//! `vegan`: generate, corrupt, train, evaluate and run experiment grids.
//!
//! Exit codes: 0 on success, 1 when a run or cell failed, 2 on usage or
//! configuration errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "vegan", version, about = "Counterfactual prediction under runtime domain corruption")]
pub struct Cli {
    /// Config file (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the command (experiment: the experiment seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Maximum number of training runs in parallel (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset, split it 3:1 and preprocess both parts.
    Generate(GenerateArgs),
    /// Apply shift and missingness to the covariates of a CSV dataset.
    Corrupt(CorruptArgs),
    /// Train one model; writes the checkpoint and the training log.
    Train,
    /// Evaluate a checkpoint on a dataset with known potential outcomes.
    Evaluate(EvaluateArgs),
    /// Run a full (model × level × seed) grid and write the report.
    Experiment,
    /// Re-render report files from a stored report.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "ihdp_like")]
    pub surface: String,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub selection_bias: Option<f64>,
    #[arg(long, default_value_t = 0.75)]
    pub split_ratio: f64,
    /// Write the raw draw as a single data.csv instead of a preprocessed split.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub cl: f64,
    /// Comma-separated column names, or `all`.
    #[arg(long, default_value = "all")]
    pub targets: String,
    #[arg(long, default_value_t = 0.1)]
    pub noise_variance: f64,
    /// Dataset whose column means centre the shift noise (default: the input).
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Training data: adds the train/runtime MMD and the volatility.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
