//! Command-line harness: synthetic data generation, training, evaluation and
//! the per-step timing benchmark. Every command reads one JSON config.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "gmvae", version, about = "Train, evaluate and benchmark Gaussian mixture VAEs")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic Gaussian-mixture dataset as CSV plus a manifest.
    GenData(Common),
    /// Train a model; writes report.json, metrics.csv and checkpoint.bin.
    Train(Common),
    /// Evaluate a checkpoint; writes eval.json.
    Eval(Common),
    /// Time optimizer steps of both estimators over several cluster counts; writes bench.csv.
    Bench(Common),
}

#[derive(Clone, Debug, PartialEq, Eq, clap::Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "gmvae-out")]
    pub out: PathBuf,
    /// Replaces the seeds in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::GenData(c) | Command::Train(c) | Command::Eval(c) | Command::Bench(c) => c,
        }
    }
}

/// Runs one command, logging progress to `log`.
pub fn run(command: &Command, log: &mut dyn Write) -> CliResult<()> {
    let common = command.common();
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        commands::override_seed(&mut cfg, seed, matches!(command, Command::GenData(_)));
    }
    let out = &common.out;
    match command {
        Command::GenData(_) => commands::cmd_gen_data(&cfg, out, log).map(drop),
        Command::Train(_) => commands::cmd_train(&cfg, out, log).map(drop),
        Command::Eval(_) => commands::cmd_eval(&cfg, out, log).map(drop),
        Command::Bench(_) => bench::cmd_bench(&cfg, out, log).map(drop),
    }
}
