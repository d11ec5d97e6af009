#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod failure;
mod run;

use config::RunConfig;
use failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "cournot-mfg",
    version,
    about = "Cournot mean field games of exhaustible resources with exploration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML, JSON, or a previous run's manifest.json).
    #[arg(long, global = true, env = "CMFG_CONFIG")]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, env = "CMFG_OUT")]
    out: Option<PathBuf>,

    /// Worker threads for sweeps and simulation.
    #[arg(long, global = true, env = "CMFG_JOBS")]
    jobs: Option<usize>,

    /// Seed for the particle simulation; overrides `sim.seed`.
    #[arg(long, global = true, env = "CMFG_SEED")]
    seed: Option<u64>,

    /// Fixed-point tolerance; overrides `solver.tol`.
    #[arg(long, global = true, env = "CMFG_TOL")]
    tol: Option<f64>,

    /// Fixed-point iteration cap; overrides `solver.max_iter`.
    #[arg(long, global = true, env = "CMFG_MAX_ITER")]
    max_iter: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Value function and controls against the constant price `solver.initial_price`.
    Hjb,
    /// Reserves distribution under the controls of the `hjb` run.
    Transport,
    /// Time-dependent equilibrium by fixed-point iteration.
    Solve,
    /// Stationary equilibrium at the constant rate `stationary.lambda`.
    Stationary,
    /// Stationary aggregates across `sweep.lambdas`.
    SweepLambda,
    /// Fluid limit (`--epsilon 0`) or the rescaled model at `epsilon > 0`.
    Fluid {
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Stationary aggregates across `sweep.epsilons` at rate `fluid.lambda`.
    SweepEpsilon,
    /// Cross-check the equilibrium against the particle simulation.
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Hjb => "hjb",
            Command::Transport => "transport",
            Command::Solve => "solve",
            Command::Stationary => "stationary",
            Command::SweepLambda => "sweep-lambda",
            Command::Fluid { .. } => "fluid",
            Command::SweepEpsilon => "sweep-epsilon",
            Command::Validate => "validate",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    if let Some(seed) = cli.seed {
        config.sim.seed = seed;
    }
    if let Some(tol) = cli.tol {
        config.solver.tol = tol;
    }
    if let Some(max_iter) = cli.max_iter {
        config.solver.max_iter = max_iter;
    }
    if let Command::Fluid {
        epsilon: Some(epsilon),
    } = cli.command
    {
        config.fluid.epsilon = epsilon;
    }
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = resolve(&cli).and_then(|config| run::execute(cli.command, config));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.to_json());
            ExitCode::from(failure.exit_code())
        }
    }
}
