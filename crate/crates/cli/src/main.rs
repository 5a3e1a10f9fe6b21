mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CertifyArgs, LrtArgs, StateInfoArgs, SweepArgs, ThresholdArgs};

/// Certify entanglement-class membership and run likelihood-ratio tests.
#[derive(Debug, Parser)]
#[command(name = "entclass", version)]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, env = "ENTCLASS_SEED", default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Try to certify that a noisy state lies in a class.
    Certify(CertifyArgs),
    /// Largest noise level at which membership can be certified.
    Threshold(ThresholdArgs),
    /// Likelihood-ratio test of tomography data against a class.
    Lrt(LrtArgs),
    /// Likelihood ratios of simulated data over a grid of noise levels.
    Sweep(SweepArgs),
    /// Matrix, purity and partial-transpose spectra of a state.
    StateInfo(StateInfoArgs),
}

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Success,
    Inconclusive,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<entclass_core::Error>() {
        Some(entclass_core::Error::Convergence { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Certify(a) => commands::certify(a, cli.seed),
        Command::Threshold(a) => commands::threshold(a, cli.seed),
        Command::Lrt(a) => commands::lrt(a, cli.seed),
        Command::Sweep(a) => commands::sweep(a, cli.seed),
        Command::StateInfo(a) => commands::state_info(a, cli.seed),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Inconclusive) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
