//! `sagd-mix`: simulate, analyze and tune SGD/SAGD chains on least squares.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 divergence-dominated
//! experiment, 3 failed `verify` checks.

mod args;
mod commands;
mod source;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use args::Common;
use commands::{AnalyzeArgs, TableArgs, TuneArgs, VerifyArgs};

#[derive(Parser, Debug)]
#[command(
    name = "sagd-mix",
    version,
    about = "Mixing rates of SGD and accelerated SGD on least squares"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run independent chains and write the mean squared distance to the target.
    Simulate(Common),
    /// Run coupled chains and write the mean squared coupling distance.
    Couple(Common),
    /// Contraction matrix, spectra, pseudospectral radius and block bound.
    Analyze(AnalyzeArgs),
    /// Grid search for hyper-parameters.
    Tune(TuneArgs),
    /// Empirical and theoretical rate table.
    Table(TableArgs),
    /// Oracle and lemma checks for one configuration.
    Verify(VerifyArgs),
    /// Standardise a CSV dataset and report its moments.
    Ingest(Common),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(sagd_mixing::Error),
    Diverged(String),
    Failed(String),
}

impl From<sagd_mixing::Error> for CliError {
    fn from(e: sagd_mixing::Error) -> Self {
        CliError::Lib(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Diverged(m) => write!(f, "divergence: {m}"),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(sagd_mixing::Error::Divergence { .. }) => 2,
            CliError::Lib(_) => 1,
            CliError::Diverged(_) => 2,
            CliError::Failed(_) => 3,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(c) => commands::simulate(c),
        Command::Couple(c) => commands::couple(c),
        Command::Analyze(a) => commands::analyze(a),
        Command::Tune(a) => commands::tune(a),
        Command::Table(a) => commands::table(a),
        Command::Verify(a) => commands::verify(a),
        Command::Ingest(c) => commands::ingest(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
