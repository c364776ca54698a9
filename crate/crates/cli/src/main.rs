//! `actugen` command-line interface.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 some cells failed.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "actugen", version, about = "Synthetic MTPL data generation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate claim counts over a portfolio and optionally split it.
    Simulate(Common),
    /// Generate synthetic replicates of a training CSV with a MICE generator.
    Generate(Common),
    /// Fit a Poisson GLM (true structure, main effects or stepwise AIC).
    Fit(Common),
    /// Score synthetic CSVs against training and test CSVs.
    Evaluate(Common),
    /// Partition a synthetic CSV and assemble augmented training sets.
    Augment(Common),
    /// Run a full experiment from simulation to result tables.
    Experiment(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => commands::simulate(c),
        Command::Generate(c) => commands::generate(c),
        Command::Fit(c) => commands::fit(c),
        Command::Evaluate(c) => commands::evaluate(c),
        Command::Augment(c) => commands::augment(c),
        Command::Experiment(c) => commands::experiment(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("actugen: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
