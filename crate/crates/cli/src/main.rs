//! `sparsetrack`: build sparse index-tracking portfolios and backtest them.
//!
//! Exit status is 0 on success, 1 when a solver fails and 2 for bad input.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{read_file, ExperimentArgs, ExperimentConfig, SynthArgs};

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Solver(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    fn status(&self) -> u8 {
        match self {
            CliError::Solver(_) => 1,
            CliError::Input(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Solver(m) => write!(f, "solver error: {m}"),
        }
    }
}

/// Sparse index tracking with l0-constrained portfolios.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one portfolio on the most recent training window and write its weights
    Track {
        #[command(flatten)]
        args: ExperimentArgs,
        /// JSON file with flat keys named like the flags; flags take precedence
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the rolling-window backtest with transaction costs
    Backtest {
        #[command(flatten)]
        args: ExperimentArgs,
        /// JSON file with flat keys named like the flags; flags take precedence
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a synthetic price panel with a planted sparse tracking portfolio
    Synth {
        #[command(flatten)]
        args: SynthArgs,
        /// JSON file with flat keys named like the flags; flags take precedence
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn experiment(args: ExperimentArgs, file: Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    let args = match file {
        Some(path) => args.over(read_file(&path)?),
        None => args,
    };
    ExperimentConfig::resolve(args)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Track { args, config } => commands::track(&experiment(args, config)?),
        Command::Backtest { args, config } => commands::backtest(&experiment(args, config)?),
        Command::Synth { args, config } => {
            let args = match config {
                Some(path) => args.over(read_file(&path)?),
                None => args,
            };
            commands::synth(args)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sparsetrack: {e}");
            ExitCode::from(e.status())
        }
    }
}
