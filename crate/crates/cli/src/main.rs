use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod output;

use config::{FileConfig, Overrides};
use error::CliError;

/// String-stability analysis of vehicle chains with asymmetric
/// bidirectional PD control.
#[derive(Debug, Parser)]
#[command(name = "stringstab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Flow-function norms, lemma conditions and denominator minima (JSON on stdout).
    CheckLemmas(Overrides),
    /// Smallest asymmetry ratio alpha with ||C1|| < 1 (exit 3 when none qualifies).
    Tune(Overrides),
    /// Integrate the chain; writes errors.csv and summary.json.
    Simulate(Overrides),
    /// (L2, l2) norm against chain length; writes sweep.csv.
    SweepN(Overrides),
    /// Leader-to-vehicle transfer H_k over the frequency grid; writes bode.csv.
    FreqResponse(Overrides),
}

fn run(cli: Cli) -> Result<commands::Completed, CliError> {
    let (overrides, action): (&Overrides, fn(&config::RunConfig) -> _) = match &cli.command {
        Command::CheckLemmas(o) => (o, commands::check_lemmas),
        Command::Tune(o) => (o, commands::tune),
        Command::Simulate(o) => (o, commands::simulate),
        Command::SweepN(o) => (o, commands::sweep),
        Command::FreqResponse(o) => (o, commands::freq_response),
    };
    let mut file = match &overrides.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    file.apply(overrides);
    action(&file.validate()?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(done) => {
            let _ = std::io::stdout().write_all(done.stdout.as_bytes());
            ExitCode::from(done.exit_code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
