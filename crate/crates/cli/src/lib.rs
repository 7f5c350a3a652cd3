//! Command-line front end: configuration, subcommand dispatch and run
//! manifests.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use kising_core::glauber::GlauberError;
use kising_core::harness::HarnessError;
use kising_core::inference::{InferenceError, Method};
use kising_core::io::FormatError;
use kising_core::moments::MomentError;
use kising_core::sk_model::ModelError;
use thiserror::Error;

use config::{resolve, CommandKind, ConfigError, FileConfig, Overrides};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Glauber(#[from] GlauberError),
    #[error(transparent)]
    Moments(#[from] MomentError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("{0}")]
    Mismatch(String),
}

#[derive(Debug, Parser)]
#[command(name = "kising", version, about = "Kinetic Ising simulation and coupling reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample an asymmetric SK coupling matrix.
    Generate,
    /// Run Glauber dynamics and write the estimated moments.
    Simulate {
        /// Use this coupling file instead of sampling from the seed.
        #[arg(long)]
        couplings: Option<PathBuf>,
        /// Also dump every measured attempt to this binary file.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Reconstruct couplings from a moments file.
    Infer {
        #[arg(long)]
        moments: PathBuf,
        /// True couplings; when given, the reconstruction error is printed.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// nmf, tap-iterative or tap-cubic (default: first configured method).
        #[arg(long)]
        method: Option<Method>,
    },
    /// Reconstruction error against temperature.
    SweepTemperature,
    /// Reconstruction error against data length.
    SweepLength,
    /// Share of three-real-root cubics against temperature.
    RootFraction,
    /// Inferred versus true couplings for plotting.
    Scatter,
    /// Validate the sampler and inference against exact enumeration.
    OracleCheck,
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::Generate => CommandKind::Generate,
            Command::Simulate { .. } => CommandKind::Simulate,
            Command::Infer { .. } => CommandKind::Infer,
            Command::SweepTemperature => CommandKind::SweepTemperature,
            Command::SweepLength => CommandKind::SweepLength,
            Command::RootFraction => CommandKind::RootFraction,
            Command::Scatter => CommandKind::Scatter,
            Command::OracleCheck => CommandKind::OracleCheck,
        }
    }
}

fn available_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Resolves the configuration and runs the subcommand. Returns whether all
/// checks passed (always true except for `oracle-check`).
pub fn run(cli: &Cli) -> Result<bool, CliError> {
    let file = match &cli.overrides.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let env_workers = std::env::var("KISING_WORKERS").ok();
    let config = resolve(&file, &cli.overrides, cli.command.kind(), env_workers.as_deref(), available_cores())?;
    match &cli.command {
        Command::Generate => commands::generate(&config)?,
        Command::Simulate { couplings, trajectory } => {
            commands::simulate(&config, couplings.as_deref(), trajectory.as_deref())?
        }
        Command::Infer { moments, truth, method } => {
            commands::infer_command(&config, moments, truth.as_deref(), *method)?
        }
        Command::SweepTemperature | Command::SweepLength | Command::RootFraction => commands::sweep(&config)?,
        Command::Scatter => commands::scatter(&config)?,
        Command::OracleCheck => return commands::oracle_check(&config),
    }
    Ok(true)
}
