//! `mutsel`: thresholds, equilibria, sweeps, dynamics and stability for the
//! two-host selection-mutation model.

mod commands;
mod config;

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use log::error;

use mutsel_core::Method;

use crate::commands::DynamicsArgs;
use crate::config::{CommonArgs, RunConfig, UsageError};

#[derive(Debug, Parser)]
#[command(name = "mutsel", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Principal eigenvalues and spectral gaps over a list of mutation scales.
    Spectrum {
        #[command(flatten)]
        common: CommonArgs,
        /// Restrict to one host operator (1 or 2).
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        host: Option<u8>,
    },
    /// Coupled and single-host steady states with diagnostics.
    Equilibrium {
        #[command(flatten)]
        common: CommonArgs,
        /// Additional seeded random starts for the uniqueness check.
        #[arg(long, default_value_t = 0)]
        starts: usize,
        /// Also compute the linearized spectrum at the solution.
        #[arg(long)]
        stability: bool,
    },
    /// Concentration and superposition tables over a list of mutation scales.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Time integration from a perturbed disease-free state.
    Dynamics {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 200.0)]
        t_end: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        /// rk4 or euler.
        #[arg(long, default_value = "rk4")]
        method: Method,
        /// Time between recorded samples.
        #[arg(long, default_value_t = 1.0)]
        sample_every: f64,
        /// Infected fraction of the canonical start.
        #[arg(long, default_value_t = mutsel_core::dynamics::CANONICAL_AMPLITUDE)]
        amplitude: f64,
    },
    /// Spectrum of the linearized fixed-point map.
    Stability {
        #[command(flatten)]
        common: CommonArgs,
        /// Linearize at A = 0 instead of at the computed equilibrium.
        #[arg(long)]
        at_zero: bool,
        /// Compare formula and matrix spectra of each single-host map (top N).
        #[arg(long, default_value_t = 0)]
        uncoupled: usize,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Spectrum { common, .. }
            | Command::Equilibrium { common, .. }
            | Command::Sweep { common }
            | Command::Dynamics { common, .. }
            | Command::Stability { common, .. } => common,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli.command.common())?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build_global()?;
    match cli.command {
        Command::Spectrum { host, .. } => commands::spectrum(&cfg, host.map(usize::from)),
        Command::Equilibrium {
            starts, stability, ..
        } => commands::equilibrium(&cfg, starts, stability),
        Command::Sweep { .. } => commands::sweep(&cfg),
        Command::Dynamics {
            t_end,
            dt,
            method,
            sample_every,
            amplitude,
            ..
        } => commands::dynamics(
            &cfg,
            &DynamicsArgs {
                t_end,
                dt,
                method,
                sample_every,
                amplitude,
            },
        ),
        Command::Stability {
            at_zero, uncoupled, ..
        } => commands::stability(&cfg, at_zero, uncoupled),
    }
}

/// Usage and configuration problems exit with 2, solver failures with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    use mutsel_core::Error as E;
    if err.is::<UsageError>() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(
            E::InvalidGrid(_)
            | E::InvalidParams(_)
            | E::UnderResolvedKernel { .. }
            | E::UnknownPreset(_)
            | E::Expression { .. }
            | E::TooManyEigenvalues { .. }
            | E::UnstableStep { .. }
            | E::EmptySweep,
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            error!("{err:#}");
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
