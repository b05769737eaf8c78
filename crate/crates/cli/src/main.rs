mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridcast_core::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "gridcast", about = "Grid-based traffic volume forecasting")]
struct Cli {
    /// Worker cap; 1 is the determinism reference (and the only level
    /// currently implemented).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize trip records and assemble the external table into a dataset.
    Ingest { #[arg(long)] config: PathBuf },
    /// Generate a synthetic dataset with known structure.
    Synth { #[arg(long)] config: PathBuf },
    /// Train a model on a prepared dataset; writes checkpoint + history CSV.
    Train { #[arg(long)] config: PathBuf },
    /// Score a forecaster on the held-out range; writes the evaluation CSV.
    Evaluate { #[arg(long)] config: PathBuf },
    /// Write per-(region, t) multi-horizon forecasts.
    Predict { #[arg(long)] config: PathBuf },
    /// Verify analytic gradients against finite differences.
    Gradcheck,
    /// Merge history and evaluation CSVs into one summary.
    Report { #[arg(long)] config: PathBuf },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_CHECK: u8 = 5;

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::State(_) | Error::Dim(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Format(_) | Error::Coverage { .. } => EXIT_IO,
        Error::Numeric(_) => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_CONFIG);
    }

    let result = match &cli.command {
        Command::Ingest { config } => RunConfig::load(config).and_then(|c| commands::ingest(&c)),
        Command::Synth { config } => RunConfig::load(config).and_then(|c| commands::synth(&c)),
        Command::Train { config } => RunConfig::load(config).and_then(|c| commands::train(&c)),
        Command::Evaluate { config } => {
            RunConfig::load(config).and_then(|c| commands::evaluate_cmd(&c))
        }
        Command::Predict { config } => RunConfig::load(config).and_then(|c| commands::predict(&c)),
        Command::Report { config } => RunConfig::load(config).and_then(|c| commands::report(&c)),
        Command::Gradcheck => {
            return match commands::gradcheck() {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(EXIT_CHECK),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code_for(&e))
                }
            };
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
