//! Command-line front end. `analyze` estimates a treatment effect from a CSV
//! trial export, with optional covariate augmentation; `simulate` drives the
//! Monte Carlo harness from a TOML config file.

mod analyze;
mod ingest;
mod simulate;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

/// Errors bubble up as plain messages; `main` prints them and exits nonzero.
pub(crate) type AppError = Box<dyn std::error::Error>;
pub(crate) type AppResult<T> = Result<T, AppError>;

pub(crate) fn fail(msg: impl Into<String>) -> AppError {
    msg.into().into()
}

#[derive(Parser)]
#[command(
    name = "augsurv",
    version,
    about = "Covariate-adjusted treatment effect estimation for randomized trials with survival endpoints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a treatment effect from a CSV dataset, unadjusted and augmented.
    Analyze(analyze::AnalyzeArgs),
    /// Run simulation scenarios described by a TOML config file.
    Simulate(simulate::SimulateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Analyze(args) => analyze::run(&args),
        Command::Simulate(args) => simulate::run(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
