//! Command-line driver: wires JSON run configurations to the solver,
//! sweep, and oracle operations and emits deterministic CSV/JSON artifacts.
//!
//! Exit codes: 0 success, 1 configuration or validation failure, 2
//! integrator abort, 3 solver non-convergence.

mod check;
mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Abort(String),
    NonConvergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Abort(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Abort(m) | CliError::NonConvergence(m) => {
                f.write_str(m)
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ggqmom",
    version,
    about = "Gauss-Galerkin quadrature method of moments for polynomial SDEs",
    after_help = "Exit codes: 0 ok, 1 config/validation, 2 integrator abort, 3 non-convergence."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Worker threads for particle simulations.
    #[arg(long, global = true, value_name = "K")]
    jobs: Option<usize>,

    /// Override the config's rngSeed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Skip model-assumption validation.
    #[arg(long, global = true)]
    force: bool,

    /// Output format (default: both).
    #[arg(long, global = true, value_enum)]
    format: Option<config::OutputFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the quadrature dynamics and write the moment trajectory.
    Simulate,
    /// Solve for a stationary measure and write the solution with a
    /// stability probe verdict.
    Stationary,
    /// Sweep a noise grid, track solution branches, and bracket the
    /// critical noise level.
    Bifurcate,
    /// Run the invariant suite against the configured model.
    Check,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(k) = cli.jobs {
        if k == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        // ignore the error if a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let lc = config::load(&path)?;
    match cli.command {
        Command::Simulate => commands::simulate(&lc, &cli.out, cli.format, cli.force),
        Command::Stationary => commands::stationary(&lc, &cli.out, cli.format, cli.force),
        Command::Bifurcate => commands::bifurcate(&lc, &cli.out, cli.format, cli.force),
        Command::Check => check::check(&lc, &cli.out, cli.seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
