//! Run configuration: an optional JSON file, overridden field by field by
//! command-line flags, resolved into one effective [`RunConfig`].

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use relax::confinement::{
    standard_starting_points, DEFAULT_MASS_TIME_SAMPLES, DEFAULT_SQUARE_LATTICE, DEFAULT_SQUARE_SIDE,
    DEFAULT_STRIDE_PERIODS,
};
use relax::density::{schedule_up_to, STANDARD_GRIDS};
use relax::io::read_phase_file;
use relax::wavefunction::DEFAULT_SEED;
use relax::{InitialDensity, IntegratorConfig, PhaseDocument, Superposition};

/// Modes per axis of the random preset and of `--seed` without a preset.
pub const DEFAULT_RANDOM_MODES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// M = 4 with the published phases 0.5442, 2.3099, 5.6703, 4.5333.
    M4Paper,
    /// M = 4 with the published alternate phases.
    M4Alt,
    /// M = 25 with seeded uniform random phases.
    M25Random,
}

/// Every field of the configuration file. All optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<Preset>,
    pub phase_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub modes_per_axis: Option<usize>,
    /// Length of the run in periods of `2 pi`.
    pub periods: Option<f64>,
    /// Explicit H-series schedule in periods (overrides `periods`).
    pub schedule: Option<Vec<f64>>,
    /// Points per cell axis of each sampling grid.
    pub grids: Option<Vec<usize>>,
    pub equilibrium_start: Option<bool>,
    /// Times (periods) at which `hbar` also writes smoothed snapshots.
    pub snapshot_periods: Option<Vec<f64>>,
    /// Times (periods) evaluated by `density`.
    pub density_periods: Option<Vec<f64>>,
    /// Forward cross-check particle count for `density` (0 disables it).
    pub crosscheck_particles: Option<usize>,
    pub integrator: Option<IntegratorConfig>,
    pub starts: Option<Vec<[f64; 2]>>,
    pub stride_periods: Option<f64>,
    pub square_side: Option<f64>,
    pub square_lattice: Option<usize>,
    /// Points per cell axis used for the coverage mass map.
    pub coverage_points_per_cell: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub resume: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Values given on the command line; `None` leaves the file value.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub preset: Option<Preset>,
    pub phase_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub modes_per_axis: Option<usize>,
    pub periods: Option<f64>,
    pub points_per_cell: Option<usize>,
    pub equilibrium_start: bool,
    pub out_dir: Option<PathBuf>,
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseSource {
    Preset { preset: Preset, seed: Option<u64> },
    PhaseFile { path: PathBuf },
    Random { seed: u64, modes_per_axis: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Phases,
    Hbar,
    Density,
    Confine,
    Check,
    Fit,
}

/// Fully resolved settings of one run. Serialized into every metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub source: PhaseSource,
    pub phases: PhaseDocument,
    pub periods: f64,
    pub schedule: Vec<f64>,
    pub grids: Vec<usize>,
    pub initial: InitialDensity,
    pub snapshot_periods: Vec<f64>,
    pub density_periods: Vec<f64>,
    pub crosscheck_particles: usize,
    pub integrator: IntegratorConfig,
    pub starts: Vec<[f64; 2]>,
    pub stride_periods: f64,
    pub square_side: f64,
    pub square_lattice: usize,
    pub coverage_points_per_cell: usize,
    pub mass_time_samples: usize,
    pub out_dir: PathBuf,
    pub resume: bool,
}

impl RunConfig {
    pub fn spec(&self) -> Result<Superposition> {
        Ok(Superposition::from_document(&self.phases)?)
    }
}

fn resolve_source(
    preset: Option<Preset>,
    phase_file: Option<&PathBuf>,
    seed: Option<u64>,
    modes: Option<usize>,
) -> Result<Option<PhaseSource>> {
    match (preset, phase_file) {
        (Some(_), Some(_)) => bail!("give either a preset or a phase file, not both"),
        (Some(Preset::M25Random), None) => Ok(Some(PhaseSource::Preset {
            preset: Preset::M25Random,
            seed: Some(seed.unwrap_or(DEFAULT_SEED)),
        })),
        (Some(p), None) => {
            if seed.is_some() {
                bail!("--seed only applies to random phases, not to the {p:?} preset");
            }
            Ok(Some(PhaseSource::Preset { preset: p, seed: None }))
        }
        (None, Some(path)) => {
            if seed.is_some() {
                bail!("give either a phase file or a seed, not both");
            }
            Ok(Some(PhaseSource::PhaseFile { path: path.clone() }))
        }
        (None, None) => Ok(seed.map(|seed| PhaseSource::Random {
            seed,
            modes_per_axis: modes.unwrap_or(DEFAULT_RANDOM_MODES),
        })),
    }
}

fn load_phases(source: &PhaseSource) -> Result<PhaseDocument> {
    let spec = match source {
        PhaseSource::Preset {
            preset: Preset::M4Paper,
            ..
        } => Superposition::reference_m4(),
        PhaseSource::Preset {
            preset: Preset::M4Alt, ..
        } => Superposition::alternate_m4(),
        PhaseSource::Preset {
            preset: Preset::M25Random,
            seed,
        } => Superposition::random(5, seed.unwrap_or(DEFAULT_SEED))?,
        PhaseSource::Random { seed, modes_per_axis } => Superposition::random(*modes_per_axis, *seed)?,
        PhaseSource::PhaseFile { path } => {
            let doc = read_phase_file(path).with_context(|| format!("reading phase file {}", path.display()))?;
            let spec =
                Superposition::from_document(&doc).with_context(|| format!("invalid phase file {}", path.display()))?;
            return Ok(spec.to_document());
        }
    };
    Ok(spec.to_document())
}

fn check_periods(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|p| !p.is_finite() || *p < 0.0) {
        bail!("{name} must be finite and nonnegative");
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        bail!("{name} must be strictly increasing");
    }
    Ok(())
}

/// Merges file and flags and validates the result.
pub fn resolve(command: Command, file: FileConfig, flags: FlagOverrides) -> Result<RunConfig> {
    let flag_source = resolve_source(
        flags.preset,
        flags.phase_file.as_ref(),
        flags.seed,
        flags.modes_per_axis.or(file.modes_per_axis),
    )?;
    let source = match flag_source {
        Some(s) => s,
        None => resolve_source(file.preset, file.phase_file.as_ref(), file.seed, file.modes_per_axis)?.unwrap_or(
            PhaseSource::Preset {
                preset: Preset::M4Paper,
                seed: None,
            },
        ),
    };
    let phases = load_phases(&source)?;
    let modes = phases.modes_per_axis;

    let default_periods = match command {
        Command::Confine => 25.0,
        Command::Density => 1.0,
        _ => 50.0,
    };
    let periods = flags.periods.or(file.periods).unwrap_or(default_periods);
    if !(periods.is_finite() && periods >= 0.0) {
        bail!("periods must be finite and nonnegative");
    }
    let schedule = match (&flags.periods, &file.schedule) {
        (None, Some(s)) => s.clone(),
        _ => schedule_up_to(periods),
    };
    check_periods("schedule", &schedule)?;
    if command == Command::Hbar && schedule.first() != Some(&0.0) {
        bail!("the H-series schedule must start at 0");
    }

    let grids = match (flags.points_per_cell, &file.grids) {
        (Some(p), _) => vec![p],
        (None, Some(g)) => g.clone(),
        (None, None) if command == Command::Density => vec![30],
        (None, None) => STANDARD_GRIDS.to_vec(),
    };
    if grids.is_empty() || grids.contains(&0) {
        bail!("grids must list at least one positive points-per-cell value");
    }

    let density_periods = match (&flags.periods, &file.density_periods) {
        (Some(p), _) => vec![0.0, *p],
        (None, Some(d)) => d.clone(),
        // Snapshot times of the published density figures.
        (None, None) if modes >= 5 => vec![0.0, 2.5, 5.0],
        (None, None) => vec![0.0, 25.0, 50.0],
    };
    let mut density_periods = density_periods;
    density_periods.dedup();
    check_periods("density_periods", &density_periods)?;

    let snapshot_periods = file.snapshot_periods.clone().unwrap_or_default();
    check_periods("snapshot_periods", &snapshot_periods)?;
    if let Some(p) = snapshot_periods.iter().find(|p| !schedule.contains(p)) {
        bail!("snapshot time {p} is not on the H-series schedule");
    }

    let integrator = file.integrator.unwrap_or_default();
    integrator
        .validate()
        .map_err(anyhow::Error::msg)
        .context("integrator settings")?;

    let starts = file
        .starts
        .clone()
        .unwrap_or_else(|| standard_starting_points::<f64>().iter().map(|p| [p.q1, p.q2]).collect());
    if starts.is_empty() {
        bail!("at least one starting point is needed");
    }
    let stride_periods = file.stride_periods.unwrap_or(DEFAULT_STRIDE_PERIODS);
    let square_side = file.square_side.unwrap_or(DEFAULT_SQUARE_SIDE);
    let square_lattice = file.square_lattice.unwrap_or(DEFAULT_SQUARE_LATTICE);
    if stride_periods.is_nan() || stride_periods <= 0.0 || square_side.is_nan() || square_side <= 0.0 || square_lattice == 0 {
        bail!("stride_periods and square_side must be positive and square_lattice at least 1");
    }

    Ok(RunConfig {
        source,
        phases,
        periods,
        schedule,
        grids,
        initial: if flags.equilibrium_start || file.equilibrium_start.unwrap_or(false) {
            InitialDensity::Equilibrium
        } else {
            InitialDensity::GroundState
        },
        snapshot_periods,
        density_periods,
        crosscheck_particles: file.crosscheck_particles.unwrap_or(0),
        integrator,
        starts,
        stride_periods,
        square_side,
        square_lattice,
        coverage_points_per_cell: file.coverage_points_per_cell.unwrap_or(4),
        mass_time_samples: DEFAULT_MASS_TIME_SAMPLES,
        out_dir: flags.out_dir.or(file.out_dir).unwrap_or_else(|| PathBuf::from("out")),
        resume: flags.resume || file.resume.unwrap_or(false),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_the_reference_run() {
        let cfg = resolve(Command::Hbar, FileConfig::default(), FlagOverrides::default()).unwrap();
        assert_eq!(
            cfg.source,
            PhaseSource::Preset {
                preset: Preset::M4Paper,
                seed: None
            }
        );
        assert_eq!(cfg.schedule.len(), 20);
        assert_eq!(cfg.grids, vec![29, 30, 31]);
        assert_eq!(cfg.initial, InitialDensity::GroundState);
    }

    #[test]
    fn flags_override_the_file() {
        let file = FileConfig {
            preset: Some(Preset::M4Alt),
            periods: Some(30.0),
            grids: Some(vec![10, 11]),
            ..FileConfig::default()
        };
        let flags = FlagOverrides {
            periods: Some(3.0),
            points_per_cell: Some(7),
            ..FlagOverrides::default()
        };
        let cfg = resolve(Command::Hbar, file.clone(), flags).unwrap();
        assert_eq!(cfg.schedule, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(cfg.grids, vec![7]);
        assert_eq!(
            cfg.source,
            PhaseSource::Preset {
                preset: Preset::M4Alt,
                seed: None
            }
        );
        let from_file = resolve(Command::Hbar, file, FlagOverrides::default()).unwrap();
        assert_eq!(from_file.grids, vec![10, 11]);
        assert_eq!(*from_file.schedule.last().unwrap(), 30.0);
    }

    #[test]
    fn conflicting_sources_are_rejected() {
        let flags = FlagOverrides {
            preset: Some(Preset::M4Paper),
            seed: Some(3),
            ..FlagOverrides::default()
        };
        assert!(resolve(Command::Hbar, FileConfig::default(), flags).is_err());
        let file = FileConfig {
            preset: Some(Preset::M4Paper),
            phase_file: Some("x.json".into()),
            ..FileConfig::default()
        };
        assert!(resolve(Command::Hbar, file, FlagOverrides::default()).is_err());
    }

    #[test]
    fn seed_selects_random_phases() {
        let flags = FlagOverrides {
            seed: Some(3),
            modes_per_axis: Some(2),
            ..FlagOverrides::default()
        };
        let cfg = resolve(Command::Phases, FileConfig::default(), flags).unwrap();
        assert_eq!(cfg.phases.modes_per_axis, 2);
        assert_eq!(cfg.phases.seed, Some(3));
    }

    #[test]
    fn unknown_file_fields_are_errors() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"perods": 3}"#).is_err());
        let cfg: FileConfig = serde_json::from_str(r#"{"integrator": {"local_error_tolerance": 1e-9}}"#).unwrap();
        assert_eq!(cfg.integrator.unwrap().max_steps_total, 10_000_000);
    }
}
