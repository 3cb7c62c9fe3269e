//! `ratchet`: solvers for optimal dividend ratcheting in a Brownian
//! surplus model. Exit codes: 0 on success, 2 for configuration problems,
//! 3 for numerical failures.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::Config;
use ratchet_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidInput(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Parser)]
#[command(name = "ratchet", version, about = "Optimal dividend ratcheting solvers")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Simulation seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap rate override
    #[arg(long, global = true)]
    cbar: Option<f64>,
    /// Tabular output format
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal thresholds for a finite menu of dividend rates
    SolveFinite,
    /// Optimal boundary curve for a continuum of rates, with verification
    SolveCurve,
    /// Comparison tables: curve vs barrier vs single-step values
    Figures,
    /// Monte Carlo value of a configured strategy
    Simulate,
    /// Dyadic menu refinement study
    Converge,
    /// Re-verify a previously written curve file
    Verify {
        /// Curve JSON produced by solve-curve
        #[arg(long, default_value = "out/curve.json")]
        input: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(c) = cli.cbar {
        cfg.curve.cbar = c;
    }
    match cli.command {
        Command::SolveFinite => commands::solve_finite(&cfg, &cli.out, cli.format),
        Command::SolveCurve => commands::solve_curve(&cfg, &cli.out, cli.format),
        Command::Figures => commands::figures(&cfg, &cli.out),
        Command::Simulate => commands::simulate(&cfg, &cli.out, cli.seed),
        Command::Converge => commands::converge(&cfg, &cli.out, cli.format),
        Command::Verify { input } => commands::verify(&cfg, &input, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) | CliError::Io(_) => ExitCode::from(2),
                CliError::Numerical(_) => ExitCode::from(3),
            }
        }
    }
}
