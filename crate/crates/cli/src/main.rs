//! Command-line runner: condition checks, equilibria, accuracy sweeps, gas
//! tables and the refund-evolution chart.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use refund_bonus::mechanisms::Mechanism;

#[derive(Debug, Parser)]
#[command(
    name = "refund-bonus",
    version,
    about = "Provision-point mechanisms with refund bonuses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run both monotonicity checks and the race detector for one scheme.
    Check {
        #[arg(long, value_parser = parse_mechanism)]
        scheme: Mechanism,
        #[arg(long)]
        config: PathBuf,
    },
    /// Equilibrium contributions for the players in `[equilibrium]`.
    Equilibrium {
        #[arg(long)]
        config: PathBuf,
    },
    /// Provision-accuracy sweep over budget fractions.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gas cost table for the on-chain refund computations.
    Gas {
        #[arg(long, value_enum, default_value_t = ExpModeArg::ByteLength)]
        exp_mode: ExpModeArg,
        /// EXP operand used for the priced total.
        #[arg(long, default_value_t = 1)]
        exp_operand: u64,
        /// Bytes logged by each LOG for the priced total.
        #[arg(long, default_value_t = 0)]
        log_bytes: u64,
    },
    /// Charts.
    Plot {
        #[command(subcommand)]
        chart: Chart,
    },
}

#[derive(Debug, Subcommand)]
enum Chart {
    /// Refund share by contribution position for every scheme.
    RefundEvolution {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExpModeArg {
    ByteLength,
    Log2,
}

fn parse_mechanism(s: &str) -> Result<Mechanism, String> {
    s.parse().map_err(|e: refund_bonus::Error| e.to_string())
}

/// Why a command stopped. Maps onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Reading or writing a file failed (exit 2).
    Io(String),
    /// Bad input, a domain error, or an unexpected check result (exit 1).
    Invalid(String),
}

impl From<refund_bonus::Error> for Failure {
    fn from(e: refund_bonus::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check { scheme, config } => commands::check(scheme, &config),
        Command::Equilibrium { config } => commands::equilibrium(&config),
        Command::Simulate { config, out } => commands::simulate(&config, &out),
        Command::Gas {
            exp_mode,
            exp_operand,
            log_bytes,
        } => {
            let mode = match exp_mode {
                ExpModeArg::ByteLength => refund_bonus::gascost::ExpMode::ByteLength,
                ExpModeArg::Log2 => refund_bonus::gascost::ExpMode::Log2,
            };
            commands::gas(mode, exp_operand, log_bytes)
        }
        Command::Plot {
            chart: Chart::RefundEvolution { config, out },
        } => commands::plot_refund_evolution(&config, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
