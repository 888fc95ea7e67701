//! `rdu-eq`: solve, certify and verify equilibrium portfolios from a JSON
//! configuration.

mod commands;
mod output;

use clap::{Parser, Subcommand};
use rdu_equilibrium::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "rdu-eq", version, about = "Equilibrium investment under rank-dependent utility")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Stability tolerance of the Lambda solver; overrides the configuration.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "RDU_EQ_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Solve for Lambda, lambda and the budget multiplier.
    Solve,
    /// Certify the weighting and utility assumptions.
    Certify,
    /// Certify the computed strategy as an equilibrium.
    Verify,
    /// Classify the risk-premium reduction at every grid node.
    RiskPremium,
    /// Simulate state-price densities and terminal wealth.
    Simulate,
    /// Reproduce the Gaussian-half closed-form example.
    ReproduceExample5,
}

/// Failure classes mapped to exit codes.
pub enum Failure {
    Config(String),
    Solver(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            other => Failure::Solver(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver error: {e}");
            ExitCode::from(3)
        }
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(4)
        }
    }
}
