mod check;
mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Command, FileConfig, FlagOverrides, Preset};

/// Pilot-wave relaxation of the two-dimensional harmonic oscillator.
#[derive(Debug, Parser)]
#[command(name = "relax", version = env!("RELAX_VERSION"))]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for all outputs (default: ./out).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Reuse density checkpoints already present in the output directory.
    #[arg(long, global = true)]
    resume: bool,
    /// Built-in phase set.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Phase document to load instead of a preset.
    #[arg(long, global = true)]
    phase_file: Option<PathBuf>,
    /// Seed for random phases.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Modes per axis for random phases.
    #[arg(long, global = true)]
    modes: Option<usize>,
    /// Run length in periods of 2 pi.
    #[arg(long, global = true)]
    periods: Option<f64>,
    /// Use a single sampling grid with this many points per cell axis.
    #[arg(long, global = true)]
    points_per_cell: Option<usize>,
    /// Start from quantum equilibrium instead of the ground-state density.
    #[arg(long, global = true)]
    equilibrium_start: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Write the phase document of the selected superposition.
    Phases,
    /// Coarse-grained H-function over time, with the decay fit.
    Hbar,
    /// Backtracked and smoothed densities at selected times.
    Density,
    /// Trajectory traces, square fates and coverage.
    Confine,
    /// Fit an existing H-series CSV.
    Fit {
        /// Series written by `relax hbar`.
        csv: PathBuf,
    },
    /// Fast self-validation suite; exits nonzero on any failure.
    Check,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let command = match &cli.command {
        Cmd::Phases => Command::Phases,
        Cmd::Hbar => Command::Hbar,
        Cmd::Density => Command::Density,
        Cmd::Confine => Command::Confine,
        Cmd::Fit { .. } => Command::Fit,
        Cmd::Check => Command::Check,
    };
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let flags = FlagOverrides {
        preset: cli.preset,
        phase_file: cli.phase_file,
        seed: cli.seed,
        modes_per_axis: cli.modes,
        periods: cli.periods,
        points_per_cell: cli.points_per_cell,
        equilibrium_start: cli.equilibrium_start,
        out_dir: cli.out_dir,
        resume: cli.resume,
    };
    let cfg = config::resolve(command, file, flags)?;
    output::configure_threads()?;
    match cli.command {
        Cmd::Phases => commands::phases(&cfg),
        Cmd::Hbar => commands::hbar(&cfg),
        Cmd::Density => commands::density(&cfg),
        Cmd::Confine => commands::confine(&cfg),
        Cmd::Fit { csv } => commands::fit(&cfg, &csv),
        Cmd::Check => check::run(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::FAILURE
        }
    }
}
