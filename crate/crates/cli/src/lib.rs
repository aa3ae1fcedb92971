//! Command-line front end: configuration loading, seeding, CSV persistence
//! and run manifests around `enkbf-core`.

// `!(x > 0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use enkbf_core::Variant;

use crate::config::{load, ModelConfig, SpsaFileConfig, StudyConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{Invocation, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "enkbf-lab", version, about = "Ensemble Kalman-Bucy filtering experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; the manifest goes to `<out>.manifest.json`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the master seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a signal/observation path pair.
    Simulate,
    /// Run an ensemble filter (and the exact reference for linear models) on stored data.
    Filter {
        /// Path-pair CSV written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "f1")]
        variant: Variant,
        #[arg(long, default_value_t = 100)]
        particles: usize,
        /// Relative eigenvalue cutoff of the F3 pseudo-inverse.
        #[arg(long)]
        pinv_tol: Option<f64>,
        /// Also write the ensemble covariance path.
        #[arg(long)]
        emit_cov: bool,
    },
    /// Monte Carlo study of the log-normalizing-constant MSE.
    MseStudy,
    /// Recursive maximum-likelihood parameter estimation with SPSA.
    Spsa {
        /// Observations to fit; simulated from `theta_true` when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Convert a study or SPSA CSV into gnuplot data blocks.
    Plot {
        #[arg(long)]
        input: PathBuf,
    },
    /// Re-run a recorded manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("--{flag} is required for this command")))
}

/// Resolves the command line into an invocation (all defaults materialized).
pub fn resolve(cli: &Cli) -> CliResult<Invocation> {
    let g = &cli.global;
    Ok(match &cli.command {
        Command::Simulate => {
            let mut cfg: ModelConfig = load(required(&g.config, "config")?)?;
            cfg.seed = g.seed.unwrap_or(cfg.seed);
            Invocation::Simulate {
                config: cfg.resolve(Variant::F1)?,
            }
        }
        Command::Filter {
            data,
            variant,
            particles,
            pinv_tol,
            emit_cov,
        } => {
            let mut cfg: ModelConfig = load(required(&g.config, "config")?)?;
            cfg.seed = g.seed.unwrap_or(cfg.seed);
            if *particles < 2 {
                return Err(CliError::Config(format!(
                    "--particles must be at least 2 (sample covariance), got {particles}"
                )));
            }
            let pinv_tol = match variant {
                Variant::F3 => Some(pinv_tol.unwrap_or(enkbf_core::enkbf::DEFAULT_PINV_TOL)),
                _ if pinv_tol.is_some() => {
                    return Err(CliError::Config("--pinv-tol only applies to f3".into()))
                }
                _ => None,
            };
            enkbf_core::enkbf::FilterVariant::new(*variant, pinv_tol)?;
            Invocation::Filter {
                config: cfg.resolve(*variant)?,
                data: data.clone(),
                variant: *variant,
                particles: *particles,
                pinv_tol,
                emit_cov: *emit_cov,
            }
        }
        Command::MseStudy => {
            let mut cfg: StudyConfig = load(required(&g.config, "config")?)?;
            cfg.seed = g.seed.unwrap_or(cfg.seed);
            Invocation::MseStudy {
                config: cfg.resolve()?,
            }
        }
        Command::Spsa { data } => {
            let mut cfg: SpsaFileConfig = load(required(&g.config, "config")?)?;
            cfg.seed = g.seed.unwrap_or(cfg.seed);
            let cfg = cfg.resolve()?;
            if data.is_none() && cfg.theta_true.is_none() {
                return Err(CliError::Config(
                    "spsa needs observations: pass --data or set theta_true".into(),
                ));
            }
            Invocation::Spsa {
                config: cfg,
                data: data.clone(),
            }
        }
        Command::Plot { input } => Invocation::Plot { input: input.clone() },
        Command::Replay { .. } => unreachable!("replay is handled before resolution"),
    })
}

pub fn run(cli: &Cli) -> CliResult<RunManifest> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // a pool may already exist when called repeatedly in one process
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("global thread pool already initialized");
        }
    }
    if let Command::Replay { manifest } = &cli.command {
        let m = RunManifest::load(manifest)?;
        return commands::replay(&m, cli.global.out.as_deref(), cli.global.force);
    }
    let inv = resolve(cli)?;
    let out = required(&cli.global.out, "out")?;
    commands::execute(&inv, out, cli.global.force)
}
