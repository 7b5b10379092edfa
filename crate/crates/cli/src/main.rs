//! `oim`: design, simulate and export optimal inconclusive measurements.
//!
//! Exit codes: 0 success, 2 invalid input or infeasible request,
//! 3 solver non-convergence or numerical failure, 4 I/O error.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oim_core::OimError;

use crate::config::{Flags, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "oim",
    version,
    about = "Optimal inconclusive measurement of binary coherent states"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Helstrom, IDP and homodyne limits per alpha_sq.
    Bounds,
    /// Error versus inconclusive probability frontier.
    Tradeoff,
    /// Monte-Carlo ensemble of designed strategies.
    Montecarlo,
    /// Dolinar receiver (no inconclusive outcome) over alpha_sq.
    Dolinar,
    /// LO magnitude table of designed strategies.
    Waveform,
    /// Bin-by-bin outcome probabilities of designed strategies.
    Evolve,
    /// Elimination + binary hybrid for M-PSK against heterodyne.
    Tpsk,
    /// Elimination floor versus alphabet size at fixed energy per bit.
    MpskScaling,
    /// Frontier gap opened by a bounded LO power.
    Gap,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(OimError),
    Io(String),
}

impl From<OimError> for CliError {
    fn from(e: OimError) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub fn core_exit_code(e: &OimError) -> u8 {
    match e {
        OimError::InvalidParameter { .. }
        | OimError::Infeasible { .. }
        | OimError::EnumerationLimit { .. } => 2,
        OimError::NonConvergence { .. } | OimError::SimplexViolation { .. } => 3,
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => core_exit_code(e),
            CliError::Io(_) => 4,
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    if let Some(n) = cli.flags.threads {
        if n == 0 {
            return Err(CliError::Usage("invalid threads: must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
    }
    let settings = Settings::new(cli.flags)?;
    let report = match cli.command {
        Command::Bounds => commands::bounds(&settings),
        Command::Tradeoff => commands::tradeoff(&settings),
        Command::Montecarlo => commands::montecarlo(&settings),
        Command::Dolinar => commands::dolinar(&settings),
        Command::Waveform => commands::waveform(&settings),
        Command::Evolve => commands::evolve(&settings),
        Command::Tpsk => commands::tpsk(&settings),
        Command::MpskScaling => commands::mpsk_scaling(&settings),
        Command::Gap => commands::gap(&settings),
    }?;
    if let Some(path) = output::emit(&report, settings.format(), settings.out())? {
        eprintln!("wrote {}", path.display());
    }
    // Partial results are written; the worst per-point failure sets the code.
    Ok(report.failures.iter().map(|f| f.code).max().unwrap_or(0))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
