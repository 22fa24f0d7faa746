//! Command-line volatility forecasting pipeline.
//!
//! Exit codes: 0 success, 2 bad input, 3 infeasible request, 4 training
//! diverged, 5 numerical failure, 64 usage error.

mod cache;
mod commands;
mod config;
mod errors;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::{evaluate, ingest, run_all, select, synth, train};
use config::FileConfig;
use errors::CliError;

#[derive(Debug, Parser)]
#[command(name = "volcast", version, about = "Daily volatility forecasting pipeline")]
struct Cli {
    /// key=value file supplying defaults; flags still win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate daily bars plus trend series with known coupling.
    Synth(synth::SynthArgs),
    /// Parse, align, and split input CSVs into a panel cache.
    Ingest(ingest::IngestArgs),
    /// Score observation schemes by mutual information and pick one.
    SelectScheme(select::SelectArgs),
    /// Fit the recurrent volatility forecaster(s).
    Train(train::TrainArgs),
    /// Score trained models against classical benchmarks.
    Evaluate(evaluate::EvalArgs),
    /// Whole pipeline: data to evaluation in one directory.
    RunAll(run_all::RunAllArgs),
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match &cli.cmd {
        Command::Synth(args) => synth::run(args, &cfg),
        Command::Ingest(args) => ingest::run(args, &cfg),
        Command::SelectScheme(args) => select::run(args, &cfg),
        Command::Train(args) => train::run(args, &cfg),
        Command::Evaluate(args) => evaluate::run(args, &cfg),
        Command::RunAll(args) => run_all::run(args, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(64);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
