//! Trajectory confinement diagnostics: long forward traces, the fate of
//! small squares of initial points, and cell-visitation coverage of the
//! `|psi|^2` support.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::CellPartition;
use crate::integrator::{integrate, integrate_sampled, IntegratorConfig, TrajectoryStatus};
use crate::num::{KahanSum, Real};
use crate::wavefunction::{Point2, SuperpositionSpec};

/// Cells whose period-averaged `|psi|^2` mass is at or below this are
/// outside the support.
pub const SIGNIFICANT_CELL_MASS: f64 = 1e-4;

/// Coverage at or above this grades as negligible confinement.
pub const NEGLIGIBLE_CONFINEMENT_COVERAGE: f64 = 0.8;

/// Coverage below this grades as strong confinement.
pub const STRONG_CONFINEMENT_COVERAGE: f64 = 0.4;

/// Squares whose final dispersion ratio falls below this are clustered.
/// Seeded M = 25 squares end between 0.65 and 0.81 after 25 periods.
pub const CLUSTERED_DISPERSION_RATIO: f64 = 0.6;

/// Default trace stride, in periods.
pub const DEFAULT_STRIDE_PERIODS: f64 = 0.01;

pub const DEFAULT_SQUARE_SIDE: f64 = 0.2;
pub const DEFAULT_SQUARE_LATTICE: usize = 10;

/// Time samples per period used for the period-averaged cell masses.
pub const DEFAULT_MASS_TIME_SAMPLES: usize = 16;

/// The ten standard starting points (also the square centres).
pub fn standard_starting_points<T: Real>() -> Vec<Point2<T>> {
    [
        (1.5, 1.5),
        (1.5, -1.5),
        (-1.5, 1.5),
        (-1.5, -1.5),
        (0.5, 0.0),
        (0.0, -0.5),
        (-0.5, 0.0),
        (0.0, 0.5),
        (0.25, 0.25),
        (-0.25, 0.25),
    ]
    .iter()
    .map(|&(a, b)| Point2::new(T::lit(a), T::lit(b)))
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTrace<T> {
    pub start: Point2<T>,
    pub stride: T,
    /// `(k * stride, q(k * stride))`, truncated at a failure.
    pub samples: Vec<(T, Point2<T>)>,
    pub status: TrajectoryStatus,
    pub steps_used: u64,
}

/// Forward trace from `t = 0` to `t_end`, recorded every `stride`.
pub fn trace<T: Real>(
    spec: &SuperpositionSpec<T>,
    start: Point2<T>,
    t_end: T,
    stride: T,
    cfg: &IntegratorConfig<T>,
) -> TrajectoryTrace<T> {
    assert!(stride > T::zero(), "trace stride must be positive");
    let count = (t_end / stride + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
    // The last stop may overshoot t_end by rounding; pin it to t_end.
    let stops: Vec<T> = (0..=count)
        .map(|k| (T::from_usize_lossy(k) * stride).min(t_end))
        .collect();
    let mut samples = Vec::with_capacity(stops.len());
    let out = integrate_sampled(spec, start, T::zero(), t_end, cfg, &stops, |t, q| samples.push((t, q)));
    TrajectoryTrace {
        start,
        stride,
        samples,
        status: out.status,
        steps_used: out.steps_used,
    }
}

/// Traces for many starting points, computed in parallel.
pub fn traces<T: Real>(
    spec: &SuperpositionSpec<T>,
    starts: &[Point2<T>],
    t_end: T,
    stride: T,
    cfg: &IntegratorConfig<T>,
) -> Vec<TrajectoryTrace<T>> {
    starts.par_iter().map(|&s| trace(spec, s, t_end, stride, cfg)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquareFate<T> {
    pub centre: Point2<T>,
    pub side: T,
    pub lattice: usize,
    pub t_end: T,
    pub initial: Vec<Point2<T>>,
    pub finals: Vec<Point2<T>>,
    pub valid: Vec<bool>,
}

impl<T: Real> SquareFate<T> {
    pub fn valid_finals(&self) -> impl Iterator<Item = &Point2<T>> {
        self.finals
            .iter()
            .zip(&self.valid)
            .filter_map(|(p, &ok)| ok.then_some(p))
    }
}

/// Forward-evolves an `n x n` lattice filling a square of the given side
/// (points at the centres of its sub-squares) to `t_end`.
pub fn square_fate<T: Real>(
    spec: &SuperpositionSpec<T>,
    centre: Point2<T>,
    side: T,
    lattice: usize,
    t_end: T,
    cfg: &IntegratorConfig<T>,
) -> SquareFate<T> {
    assert!(side > T::zero(), "square side must be positive");
    let h = side / T::from_usize_lossy(lattice);
    let offset = |i: usize| -side * T::lit(0.5) + (T::from_usize_lossy(i) + T::lit(0.5)) * h;
    let initial: Vec<Point2<T>> = (0..lattice * lattice)
        .map(|i| Point2::new(centre.q1 + offset(i / lattice), centre.q2 + offset(i % lattice)))
        .collect();
    let outcomes: Vec<_> = initial
        .par_iter()
        .map(|&p| integrate(spec, p, T::zero(), t_end, cfg))
        .collect();
    SquareFate {
        centre,
        side,
        lattice,
        t_end,
        finals: outcomes.iter().map(|o| o.endpoint).collect(),
        valid: outcomes.iter().map(|o| o.succeeded()).collect(),
        initial,
    }
}

/// Period-averaged `|psi|^2` mass of every cell of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMassMap<T> {
    pub partition: CellPartition<T>,
    pub mass: Vec<T>,
}

impl<T: Real> CellMassMap<T> {
    /// Averages over `time_samples` equally spaced times in one period, each
    /// cell's mass being the sampled cell mean of `|psi|^2` times its area.
    pub fn new(spec: &SuperpositionSpec<T>, partition: &CellPartition<T>, time_samples: usize) -> Self {
        let cells = partition.cells_per_axis;
        let ppc = partition.points_per_cell_axis;
        let n = partition.points_per_axis();
        let area = partition.cell_side() * partition.cell_side();
        let per_point = area / T::from_usize_lossy(ppc * ppc * time_samples.max(1));
        let mass = (0..cells * cells)
            .into_par_iter()
            .map(|cell| {
                let (c1, c2) = (cell / cells, cell % cells);
                let mut acc = KahanSum::new();
                for s in 0..time_samples.max(1) {
                    let t = T::lit(TAU) * T::from_usize_lossy(s) / T::from_usize_lossy(time_samples.max(1));
                    for i1 in c1 * ppc..(c1 + 1) * ppc {
                        for i2 in c2 * ppc..(c2 + 1) * ppc {
                            acc.add(spec.rho_qt(partition.point(i1 * n + i2), t));
                        }
                    }
                }
                acc.value() * per_point
            })
            .collect();
        Self {
            partition: *partition,
            mass,
        }
    }

    #[inline]
    pub fn is_significant(&self, cell: usize) -> bool {
        self.mass[cell] > T::lit(SIGNIFICANT_CELL_MASS)
    }

    pub fn significant_mass(&self) -> T {
        (0..self.mass.len())
            .filter(|&c| self.is_significant(c))
            .map(|c| self.mass[c])
            .sum()
    }

    /// Area covered by significant cells.
    pub fn support_area(&self) -> T {
        let side = self.partition.cell_side();
        let count = (0..self.mass.len()).filter(|&c| self.is_significant(c)).count();
        T::from_usize_lossy(count) * side * side
    }

    pub fn cell_index(&self, p: &Point2<T>) -> Option<usize> {
        let c1 = self.partition.cell_of(p.q1)?;
        let c2 = self.partition.cell_of(p.q2)?;
        Some(c1 * self.partition.cells_per_axis + c2)
    }
}

/// Mass-weighted fraction of the `|psi|^2` support visited by the traces:
/// the period-averaged mass of significant cells touched by any sample,
/// over the mass of all significant cells.
pub fn coverage<T: Real>(
    traces: &[TrajectoryTrace<T>],
    partition: &CellPartition<T>,
    spec: &SuperpositionSpec<T>,
) -> T {
    coverage_with(traces, &CellMassMap::new(spec, partition, DEFAULT_MASS_TIME_SAMPLES))
}

pub fn coverage_with<T: Real>(traces: &[TrajectoryTrace<T>], map: &CellMassMap<T>) -> T {
    let mut visited = vec![false; map.mass.len()];
    for tr in traces {
        for (_, p) in &tr.samples {
            if let Some(cell) = map.cell_index(p) {
                visited[cell] = true;
            }
        }
    }
    let total = map.significant_mass();
    if !(total > T::zero()) {
        return T::zero();
    }
    let hit: T = (0..map.mass.len())
        .filter(|&c| visited[c] && map.is_significant(c))
        .map(|c| map.mass[c])
        .sum();
    hit / total
}

/// Mean over traces of the coverage of each trace on its own. Unlike the
/// union, this does not saturate once a handful of starts tile the support,
/// so it is what [`ConfinementGrade`] is read from.
pub fn mean_trace_coverage<T: Real>(traces: &[TrajectoryTrace<T>], map: &CellMassMap<T>) -> T {
    if traces.is_empty() {
        return T::zero();
    }
    let total: T = traces.iter().map(|t| coverage_with(std::slice::from_ref(t), map)).sum();
    total / T::from_usize_lossy(traces.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfinementGrade {
    Negligible,
    Mild,
    Strong,
}

impl ConfinementGrade {
    pub fn from_coverage<T: Real>(coverage: T) -> Self {
        if coverage >= T::lit(NEGLIGIBLE_CONFINEMENT_COVERAGE) {
            Self::Negligible
        } else if coverage >= T::lit(STRONG_CONFINEMENT_COVERAGE) {
            Self::Mild
        } else {
            Self::Strong
        }
    }
}

/// Clark-Evans ratio of the valid final points of a square: mean
/// nearest-neighbour distance over its expectation `0.5 / sqrt(n / A)` for
/// a uniform scatter of the same points across the support area `A`.
/// Values well below one indicate clustering (streaks, clumps); values near
/// one a dispersed scatter.
pub fn dispersion_ratio<T: Real>(fate: &SquareFate<T>, support_area: T) -> T {
    let pts: Vec<&Point2<T>> = fate.valid_finals().collect();
    let n = pts.len();
    if n < 2 || !(support_area > T::zero()) {
        return T::zero();
    }
    let mut acc = KahanSum::new();
    for (i, p) in pts.iter().enumerate() {
        let nearest = pts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| p.distance(q))
            .fold(T::infinity(), T::min);
        acc.add(nearest);
    }
    let mean = acc.value() / T::from_usize_lossy(n);
    let expected = T::lit(0.5) / (T::from_usize_lossy(n) / support_area).sqrt();
    mean / expected
}
