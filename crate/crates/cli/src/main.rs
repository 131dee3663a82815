//! `bmm`: fit, predict, evaluate and compare model combinations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "bmm", version, about = "Bayesian model averaging and mixing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a mixture posterior, or compute BMA weights, into a run directory.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Posterior predictive summaries (predictive.csv).
    Predict {
        #[arg(long)]
        run: PathBuf,
        /// CSV of coordinates; defaults to the test set, else the training set.
        #[arg(long)]
        locations: Option<PathBuf>,
    },
    /// Train/test rms, sigma summary and ECP (metrics.csv, ecp.csv).
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        /// Held-out observations; defaults to the configured test set.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Evidences and BMA weights by all three methods (evidence.csv, bma_weights.csv).
    Evidence {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Posterior weight field over a grid (weights.csv).
    Weights {
        #[arg(long)]
        run: PathBuf,
        /// CSV of coordinates; defaults to the positive-prediction domain.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
}

/// Errors in the invocation or configuration rather than in the computation.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn configure(path: &PathBuf, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).map_err(Usage)?;
    cfg.apply(overrides);
    cfg.validate().map_err(Usage)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config, overrides } => commands::fit(&configure(&config, &overrides)?),
        Command::Evidence { config, overrides } => commands::evidence(&configure(&config, &overrides)?),
        Command::Predict { run, locations } => commands::predict(&commands::Run::open(&run)?, locations.as_deref()),
        Command::Evaluate { run, test } => commands::evaluate(&commands::Run::open(&run)?, test.as_deref()),
        Command::Weights { run, grid } => commands::weights(&commands::Run::open(&run)?, grid.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
