//! Command-line driver: dataset simulation, network inference, scoring and
//! benchmark sweeps.
//!
//! Exit codes: 0 success, 2 usage, 3 IO, 4 numerical failure, 5 mismatched
//! inputs. `RJNET_SEED` sets the default seed.

use std::ffi::OsString;

use clap::{Parser, Subcommand};

pub mod config;
pub mod csvio;
pub mod documents;
pub mod error;
pub mod evaluate;
pub mod infer;
pub mod report;
pub mod simulate;
pub mod sweep;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "rjnet", version, about = "Sparse network topology inference from time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate benchmark networks and simulate datasets.
    Simulate(simulate::SimulateArgs),
    /// Infer the parents of every measured node.
    Infer(infer::InferArgs),
    /// Score results documents against ground truth.
    Evaluate(evaluate::EvaluateArgs),
    /// Run a full benchmark protocol.
    Sweep(sweep::SweepArgs),
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Infer(a) => infer::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Sweep(a) => sweep::run(a),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
