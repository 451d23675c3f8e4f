//! `dcinv`: configuration-driven pipeline for data-consistent inversion.
//!
//! ```text
//! dcinv generate --config case.toml   # sample the stochastic map on a grid
//! dcinv fit      --config case.toml   # fit a GP surrogate to a dataset
//! dcinv invert   --config case.toml   # run the inversion, write samples and exports
//! dcinv diagnose --config case.toml   # recompute diagnostics from ensemble.csv
//! ```
//!
//! Exit codes: 0 success, 2 config or input error, 3 fitting failure,
//! 4 unreachable target, 5 numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod exports;
mod lock;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Run;
use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "dcinv", version, about = "Data-consistent stochastic inversion for structure-property maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides [outputs] directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Parse and check the config, then exit without running
    #[arg(long)]
    validate_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the stochastic map on a grid and write ensemble statistics
    Generate(Common),
    /// Fit a Matérn-3/2 GP surrogate to a dataset
    Fit(Common),
    /// Run the inversion and write samples, diagnostics and plot tables
    Invert(Common),
    /// Recompute diagnostics from a stored ensemble
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Ensemble CSV (default: <out-dir>/ensemble.csv)
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
}

fn start(c: Common) -> CliResult<Run> {
    Run::new(&c.config, c.seed, c.out_dir, c.validate_config)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(c) => commands::generate(&start(c)?),
        Command::Fit(c) => commands::fit(&start(c)?),
        Command::Invert(c) => commands::invert_cmd(&start(c)?),
        Command::Diagnose { common, ensemble } => commands::diagnose(&start(common)?, ensemble),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
