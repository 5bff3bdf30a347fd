//! `vrf-rls`: run scenarios, analyze regressor records and run Monte Carlo
//! covariance studies.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numerical
//! degeneracy, 4 record shorter than `N_max + 2`, 5 scenario with parameter
//! changes passed to `montecarlo`.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "vrf-rls",
    version,
    about = "Variable-rate forgetting RLS experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario and write its per-step trace as CSV.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces both the input and the noise seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Persistency profile and consistency sequences of a trace or regressor record.
    Analyze {
        /// Trace CSV written by `run`, or a `k,beta,phi_1..` record.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        nmax: usize,
        /// Output lags in a trace's regressor (default: half the parameters).
        #[arg(long)]
        na: Option<usize>,
    },
    /// Sample covariance of the estimate across replicates, with analytic bounds.
    Montecarlo {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 500)]
        runs: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        nmax: usize,
        #[arg(long)]
        seed_override: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            seed_override,
        } => commands::run(&scenario, &out, seed_override),
        Command::Analyze {
            input,
            out,
            nmax,
            na,
        } => commands::analyze(&input, &out, nmax, na),
        Command::Montecarlo {
            scenario,
            runs,
            checkpoints,
            out,
            nmax,
            seed_override,
        } => commands::montecarlo(&scenario, runs, &checkpoints, &out, nmax, seed_override),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code as u8)
        }
    }
}
