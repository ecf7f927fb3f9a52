//! Nonequilibrium densities by backtracking, coarse-graining on square
//! cells, the coarse-grained H-function, smoothed densities and a
//! forward-evolution cross-check.
//!
//! Sample grids are cell-aligned: each cell holds a `p x p` sub-lattice of
//! points at the centres of its sub-squares, so no sample ever lies on a
//! cell boundary. Flat sample indices are `i1 * n + i2`, where `i1` indexes
//! `q1` and `i2` indexes `q2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{HBarEntry, HBarSeries};
use crate::integrator::{backtrack, integrate, IntegratorConfig};
use crate::num::{KahanSum, Real};
use crate::wavefunction::{rho_initial, Point2, SuperpositionSpec};

/// Runs with fewer successfully backtracked points than this are aborted.
pub const MIN_ACCURACY_FRACTION: f64 = 0.95;

/// Points per cell axis of the three standard sampling grids.
pub const STANDARD_GRIDS: [usize; 3] = [29, 30, 31];

/// Neighbouring smoothing cells are offset by this fraction of the cell side.
pub const SMOOTHING_SHIFT_FRACTION: f64 = 0.2;

/// Sampling times in periods: every period up to 15, then 20, 30, 40, 50.
pub fn default_schedule() -> Vec<f64> {
    (0..=15).map(f64::from).chain([20.0, 30.0, 40.0, 50.0]).collect()
}

/// The default schedule's pattern cut at `periods`: every period up to 15,
/// then every tenth, with `periods` itself appended when it falls between.
pub fn schedule_up_to(periods: f64) -> Vec<f64> {
    let mut out: Vec<f64> = (0..=15).map(f64::from).take_while(|&p| p <= periods).collect();
    let mut p = 20.0;
    while p <= periods {
        out.push(p);
        p += 10.0;
    }
    if out.last().is_some_and(|&last| last < periods) {
        out.push(periods);
    }
    out
}

#[derive(Debug, Error)]
pub enum DensityError<T: Real> {
    #[error("run aborted at t = {time}: only {:.2}% of trajectories succeeded", accuracy * 100.0)]
    AbortedRun {
        time: f64,
        accuracy: f64,
        /// The partial field, kept for diagnosis.
        field: Box<DensityField<T>>,
    },
    #[error("field at t = {time} is unusable (accuracy {accuracy})")]
    Unusable { time: f64, accuracy: f64 },
    #[error("cell ({i1}, {i2}) has no valid sample points")]
    CellStarved { i1: usize, i2: usize },
    #[error("cell ({i1}, {i2}) has positive density but zero equilibrium density")]
    InfiniteHBar { i1: usize, i2: usize },
    #[error("forward cross-check needs at least 10^4 particles, got {0}")]
    TooFewParticles(usize),
    #[error("forward cross-check kept only {:.2}% of particles", fraction * 100.0)]
    TooFewSurvivors { fraction: f64 },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
}

/// Coarse-graining geometry: a square box centred on the origin, split into
/// `cells_per_axis^2` cells, each sampled by `points_per_cell_axis^2` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellPartition<T> {
    pub box_side: T,
    pub cells_per_axis: usize,
    pub points_per_cell_axis: usize,
}

impl<T: Real> CellPartition<T> {
    /// Box of side 10 with 16 x 16 cells of side 5/8.
    pub fn standard(points_per_cell_axis: usize) -> Self {
        Self {
            box_side: T::lit(10.0),
            cells_per_axis: 16,
            points_per_cell_axis,
        }
    }

    pub fn with_points_per_cell(mut self, points_per_cell_axis: usize) -> Self {
        self.points_per_cell_axis = points_per_cell_axis;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.box_side > T::zero()) || !self.box_side.is_finite() {
            return Err(format!("box_side must be positive, got {}", self.box_side));
        }
        if self.cells_per_axis == 0 || self.points_per_cell_axis == 0 {
            return Err("cells_per_axis and points_per_cell_axis must be positive".into());
        }
        Ok(())
    }

    #[inline]
    pub fn cell_side(&self) -> T {
        self.box_side / T::from_usize_lossy(self.cells_per_axis)
    }

    #[inline]
    pub fn points_per_axis(&self) -> usize {
        self.cells_per_axis * self.points_per_cell_axis
    }

    #[inline]
    pub fn total_points(&self) -> usize {
        self.points_per_axis() * self.points_per_axis()
    }

    #[inline]
    pub fn spacing(&self) -> T {
        self.box_side / T::from_usize_lossy(self.points_per_axis())
    }

    #[inline]
    pub fn half_side(&self) -> T {
        self.box_side * T::lit(0.5)
    }

    /// Coordinate of sample `i` along either axis.
    #[inline]
    pub fn coordinate(&self, i: usize) -> T {
        -self.half_side() + (T::from_usize_lossy(i) + T::lit(0.5)) * self.spacing()
    }

    #[inline]
    pub fn point(&self, index: usize) -> Point2<T> {
        let n = self.points_per_axis();
        Point2::new(self.coordinate(index / n), self.coordinate(index % n))
    }

    /// Cell index along one axis containing coordinate `x`, if inside the box.
    #[inline]
    pub fn cell_of(&self, x: T) -> Option<usize> {
        let u = (x + self.half_side()) / self.cell_side();
        if u >= T::zero() && u < T::from_usize_lossy(self.cells_per_axis) {
            u.floor().to_usize()
        } else {
            None
        }
    }

    /// Centre of cell `c` along either axis.
    #[inline]
    pub fn cell_centre(&self, c: usize) -> T {
        -self.half_side() + (T::from_usize_lossy(c) + T::lit(0.5)) * self.cell_side()
    }
}

/// Which density is transported from `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDensity {
    /// `rho(q, 0) = |phi_0(q1) phi_0(q2)|^2`.
    #[default]
    GroundState,
    /// `rho(q, 0) = |psi(q, 0)|^2`; the ensemble stays in equilibrium.
    Equilibrium,
}

impl InitialDensity {
    #[inline]
    pub fn value<T: Real>(self, spec: &SuperpositionSpec<T>, p: Point2<T>) -> T {
        match self {
            Self::GroundState => rho_initial(p),
            Self::Equilibrium => spec.rho_qt(p, T::zero()),
        }
    }
}

/// Point-sampled `rho` and `rho_QT` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField<T> {
    pub time: T,
    pub partition: CellPartition<T>,
    pub rho: Vec<T>,
    pub rho_qt: Vec<T>,
    pub valid: Vec<bool>,
    pub accuracy_fraction: T,
}

impl<T: Real> DensityField<T> {
    pub fn usable(&self) -> bool {
        self.accuracy_fraction >= T::lit(MIN_ACCURACY_FRACTION)
    }

    fn require_usable(&self) -> Result<(), DensityError<T>> {
        if self.usable() {
            Ok(())
        } else {
            Err(DensityError::Unusable {
                time: self.time.as_f64(),
                accuracy: self.accuracy_fraction.as_f64(),
            })
        }
    }

    fn accuracy_of(valid: &[bool]) -> T {
        let ok = valid.iter().filter(|&&v| v).count();
        T::from_usize_lossy(ok) / T::from_usize_lossy(valid.len().max(1))
    }
}

/// Samples `rho(q, t)` on the partition's grid by backtracking every grid
/// point to `t = 0` and transporting the conserved ratio `rho / rho_QT`.
pub fn build_density<T: Real>(
    spec: &SuperpositionSpec<T>,
    t: T,
    partition: &CellPartition<T>,
    cfg: &IntegratorConfig<T>,
    initial: InitialDensity,
) -> Result<DensityField<T>, DensityError<T>> {
    partition.validate().map_err(DensityError::InvalidPartition)?;
    let samples: Vec<(T, T, bool)> = (0..partition.total_points())
        .into_par_iter()
        .map(|index| {
            let g = partition.point(index);
            let rho_qt = spec.rho_qt(g, t);
            let outcome = backtrack(spec, g, t, cfg);
            match outcome.endpoint() {
                Some(&origin) => {
                    let ratio = initial.value(spec, origin) / spec.rho_qt(origin, T::zero());
                    let rho = ratio * rho_qt;
                    if rho.is_finite() {
                        (rho, rho_qt, true)
                    } else {
                        (T::zero(), rho_qt, false)
                    }
                }
                None => (T::zero(), rho_qt, false),
            }
        })
        .collect();

    let mut rho = Vec::with_capacity(samples.len());
    let mut rho_qt = Vec::with_capacity(samples.len());
    let mut valid = Vec::with_capacity(samples.len());
    for (r, q, v) in samples {
        rho.push(r);
        rho_qt.push(q);
        valid.push(v);
    }
    let accuracy_fraction = DensityField::<T>::accuracy_of(&valid);
    let field = DensityField {
        time: t,
        partition: *partition,
        rho,
        rho_qt,
        valid,
        accuracy_fraction,
    };
    if field.usable() {
        Ok(field)
    } else {
        Err(DensityError::AbortedRun {
            time: t.as_f64(),
            accuracy: accuracy_fraction.as_f64(),
            field: Box::new(field),
        })
    }
}

/// Cell means of `rho` and `rho_QT` over valid samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseField<T> {
    pub cells_per_axis: usize,
    pub cell_side: T,
    pub rho: Vec<T>,
    pub rho_qt: Vec<T>,
    pub counts: Vec<usize>,
}

pub fn coarse_grain<T: Real>(field: &DensityField<T>) -> Result<CoarseField<T>, DensityError<T>> {
    field.require_usable()?;
    let part = &field.partition;
    let cells = part.cells_per_axis;
    let ppc = part.points_per_cell_axis;
    let n = part.points_per_axis();
    let mut out = CoarseField {
        cells_per_axis: cells,
        cell_side: part.cell_side(),
        rho: vec![T::zero(); cells * cells],
        rho_qt: vec![T::zero(); cells * cells],
        counts: vec![0; cells * cells],
    };
    for c1 in 0..cells {
        for c2 in 0..cells {
            let mut sum_rho = KahanSum::new();
            let mut sum_qt = KahanSum::new();
            let mut count = 0usize;
            for i1 in c1 * ppc..(c1 + 1) * ppc {
                for i2 in c2 * ppc..(c2 + 1) * ppc {
                    let idx = i1 * n + i2;
                    if field.valid[idx] {
                        sum_rho.add(field.rho[idx]);
                        sum_qt.add(field.rho_qt[idx]);
                        count += 1;
                    }
                }
            }
            if count == 0 {
                return Err(DensityError::CellStarved { i1: c1, i2: c2 });
            }
            let k = T::from_usize_lossy(count);
            let cell = c1 * cells + c2;
            out.rho[cell] = sum_rho.value() / k;
            out.rho_qt[cell] = sum_qt.value() / k;
            out.counts[cell] = count;
        }
    }
    Ok(out)
}

/// Coarse-grained H-function `sum_cells rho_bar ln(rho_bar / rho_bar_QT) * area`.
pub fn hbar<T: Real>(coarse: &CoarseField<T>) -> Result<T, DensityError<T>> {
    let area = coarse.cell_side * coarse.cell_side;
    let mut acc = KahanSum::new();
    for (cell, (&r, &q)) in coarse.rho.iter().zip(&coarse.rho_qt).enumerate() {
        if r <= T::zero() {
            continue;
        }
        if q <= T::zero() {
            return Err(DensityError::InfiniteHBar {
                i1: cell / coarse.cells_per_axis,
                i2: cell % coarse.cells_per_axis,
            });
        }
        acc.add(r * (r / q).ln());
    }
    Ok(acc.value() * area)
}

/// `build_density` followed by `coarse_grain` and `hbar`.
pub fn hbar_at<T: Real>(
    spec: &SuperpositionSpec<T>,
    t: T,
    partition: &CellPartition<T>,
    cfg: &IntegratorConfig<T>,
    initial: InitialDensity,
) -> Result<(T, DensityField<T>), DensityError<T>> {
    let field = build_density(spec, t, partition, cfg, initial)?;
    let value = hbar(&coarse_grain(&field)?)?;
    Ok((value, field))
}

/// Checkpoint and resume hooks for [`hbar_series_with`].
pub trait SeriesHooks<T: Real> {
    /// A previously computed field for `(time, partition)`, if one exists.
    fn cached_field(&mut self, _time: T, _partition: &CellPartition<T>) -> Option<DensityField<T>> {
        None
    }

    /// Called for every freshly computed field, including aborted ones.
    fn field_completed(&mut self, _field: &DensityField<T>) {}

    /// Called once all grids at one time are done.
    fn entry_completed(&mut self, _entry: &HBarEntry<T>) {}
}

/// Hooks that do nothing.
pub struct NoHooks;

impl<T: Real> SeriesHooks<T> for NoHooks {}

#[derive(Debug, Error)]
#[error("H-series stopped after {} completed times: {source}", completed.entries.len())]
pub struct SeriesError<T: Real> {
    /// Entries completed before the failure.
    pub completed: HBarSeries<T>,
    #[source]
    pub source: DensityError<T>,
}

/// `H_bar(t)` for every time in `times` and every partition in `grids`.
pub fn hbar_series<T: Real>(
    spec: &SuperpositionSpec<T>,
    times: &[T],
    grids: &[CellPartition<T>],
    cfg: &IntegratorConfig<T>,
    initial: InitialDensity,
) -> Result<HBarSeries<T>, SeriesError<T>> {
    hbar_series_with(spec, times, grids, cfg, initial, &mut NoHooks)
}

pub fn hbar_series_with<T: Real, H: SeriesHooks<T>>(
    spec: &SuperpositionSpec<T>,
    times: &[T],
    grids: &[CellPartition<T>],
    cfg: &IntegratorConfig<T>,
    initial: InitialDensity,
    hooks: &mut H,
) -> Result<HBarSeries<T>, SeriesError<T>> {
    let mut series = HBarSeries::default();
    for &t in times {
        let mut values = Vec::with_capacity(grids.len());
        let mut accuracy_min = T::one();
        for part in grids {
            let field = match hooks.cached_field(t, part) {
                Some(f) => f,
                None => match build_density(spec, t, part, cfg, initial) {
                    Ok(f) => {
                        hooks.field_completed(&f);
                        f
                    }
                    Err(err) => {
                        if let DensityError::AbortedRun { field, .. } = &err {
                            hooks.field_completed(field);
                        }
                        return Err(SeriesError {
                            completed: series,
                            source: err,
                        });
                    }
                },
            };
            let value = coarse_grain(&field).and_then(|c| hbar(&c));
            match value {
                Ok(v) => values.push(v),
                Err(source) => {
                    return Err(SeriesError {
                        completed: series,
                        source,
                    })
                }
            }
            accuracy_min = accuracy_min.min(field.accuracy_fraction);
        }
        let entry = HBarEntry::new(t, values, accuracy_min);
        hooks.entry_completed(&entry);
        series.entries.push(entry);
    }
    Ok(series)
}

/// Densities averaged over overlapping cells whose centres form a square
/// lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedField<T> {
    pub time: T,
    pub centres_per_axis: usize,
    /// Coordinate of the first centre along either axis.
    pub origin: T,
    pub spacing: T,
    pub cell_side: T,
    pub rho: Vec<T>,
    pub rho_qt: Vec<T>,
}

impl<T: Real> SmoothedField<T> {
    #[inline]
    pub fn centre(&self, index: usize) -> Point2<T> {
        let n = self.centres_per_axis;
        Point2::new(
            self.origin + T::from_usize_lossy(index / n) * self.spacing,
            self.origin + T::from_usize_lossy(index % n) * self.spacing,
        )
    }

    /// `sum |rho~ - rho~_QT| / sum rho~_QT`.
    pub fn relative_l1_to_equilibrium(&self) -> T {
        relative_l1(&self.rho, &self.rho_qt)
    }
}

/// `sum |a - b| / sum |b|`.
pub fn relative_l1<T: Real>(a: &[T], b: &[T]) -> T {
    let mut diff = KahanSum::new();
    let mut total = KahanSum::new();
    for (&x, &y) in a.iter().zip(b) {
        diff.add((x - y).abs());
        total.add(y.abs());
    }
    diff.value() / total.value()
}

/// Overlapping-cell lattice geometry derived from a partition.
#[derive(Debug, Clone, Copy)]
struct SmoothingLattice<T> {
    half: T,
    cell_side: T,
    shift: T,
    centres_per_axis: usize,
    shifts_per_cell: usize,
}

impl<T: Real> SmoothingLattice<T> {
    fn for_partition(part: &CellPartition<T>) -> Self {
        let cell_side = part.cell_side();
        let shifts_per_cell = (T::one() / T::lit(SMOOTHING_SHIFT_FRACTION))
            .round()
            .to_usize()
            .unwrap_or(5);
        let shift = cell_side / T::from_usize_lossy(shifts_per_cell);
        Self {
            half: part.half_side(),
            cell_side,
            shift,
            centres_per_axis: (part.cells_per_axis - 1) * shifts_per_cell + 1,
            shifts_per_cell,
        }
    }

    #[inline]
    fn lower(&self, k: usize) -> T {
        -self.half + T::from_usize_lossy(k) * self.shift
    }

    fn origin(&self) -> T {
        self.lower(0) + self.cell_side * T::lit(0.5)
    }
}

/// Smooths a field over overlapping cells of the partition's cell side,
/// neighbouring cells shifted by a fifth of that side.
pub fn smooth_density<T: Real>(field: &DensityField<T>) -> Result<SmoothedField<T>, DensityError<T>> {
    field.require_usable()?;
    let part = &field.partition;
    let lattice = SmoothingLattice::for_partition(part);
    let n = part.points_per_axis();
    let h = part.spacing();
    // Sample i sits at -half + (i + 1/2) h; a cell [lo, lo + side) holds the
    // samples with index in [ceil((lo + half)/h - 1/2), ceil((hi + half)/h - 1/2)).
    let index_range = |k: usize| {
        let lo = lattice.lower(k);
        let hi = lo + lattice.cell_side;
        let first = ((lo + lattice.half) / h - T::lit(0.5)).ceil().max(T::zero());
        let last = ((hi + lattice.half) / h - T::lit(0.5)).ceil();
        let first = first.to_usize().unwrap_or(0).min(n);
        let last = last.to_usize().unwrap_or(n).min(n);
        first..last
    };
    let ranges: Vec<_> = (0..lattice.centres_per_axis).map(index_range).collect();
    let m = lattice.centres_per_axis;
    let mut rho = vec![T::zero(); m * m];
    let mut rho_qt = vec![T::zero(); m * m];
    for k1 in 0..m {
        for k2 in 0..m {
            let mut sr = KahanSum::new();
            let mut sq = KahanSum::new();
            let mut count = 0usize;
            for i1 in ranges[k1].clone() {
                for i2 in ranges[k2].clone() {
                    let idx = i1 * n + i2;
                    if field.valid[idx] {
                        sr.add(field.rho[idx]);
                        sq.add(field.rho_qt[idx]);
                        count += 1;
                    }
                }
            }
            if count == 0 {
                return Err(DensityError::CellStarved { i1: k1, i2: k2 });
            }
            let c = T::from_usize_lossy(count);
            rho[k1 * m + k2] = sr.value() / c;
            rho_qt[k1 * m + k2] = sq.value() / c;
        }
    }
    Ok(SmoothedField {
        time: field.time,
        centres_per_axis: m,
        origin: lattice.origin(),
        spacing: lattice.shift,
        cell_side: lattice.cell_side,
        rho,
        rho_qt,
    })
}

/// Independent estimate of the smoothed density at `t`: a uniform grid of
/// roughly `n_particles` points is evolved forwards from `t = 0`, each point
/// carrying the initial-density mass of its grid square; the surviving mass
/// is binned on squares of the lattice spacing and summed over each
/// overlapping cell. `rho~_QT` is the sampled cell mean of `|psi|^2` on the
/// partition's grid.
pub fn forward_crosscheck<T: Real>(
    spec: &SuperpositionSpec<T>,
    t: T,
    n_particles: usize,
    partition: &CellPartition<T>,
    cfg: &IntegratorConfig<T>,
    initial: InitialDensity,
) -> Result<SmoothedField<T>, DensityError<T>> {
    partition.validate().map_err(DensityError::InvalidPartition)?;
    if n_particles < 10_000 {
        return Err(DensityError::TooFewParticles(n_particles));
    }
    let per_axis = (n_particles as f64).sqrt().ceil() as usize;
    let launch = CellPartition {
        box_side: partition.box_side,
        cells_per_axis: 1,
        points_per_cell_axis: per_axis,
    };
    let area = launch.spacing() * launch.spacing();
    let finals: Vec<Option<(Point2<T>, T)>> = (0..launch.total_points())
        .into_par_iter()
        .map(|index| {
            let start = launch.point(index);
            let mass = initial.value(spec, start) * area;
            let out = integrate(spec, start, T::zero(), t, cfg);
            out.endpoint().map(|&p| (p, mass))
        })
        .collect();
    let survivors = finals.iter().filter(|f| f.is_some()).count();
    let fraction = survivors as f64 / finals.len() as f64;
    if fraction < MIN_ACCURACY_FRACTION {
        return Err(DensityError::TooFewSurvivors { fraction });
    }

    let lattice = SmoothingLattice::for_partition(partition);
    let bins = partition.cells_per_axis * lattice.shifts_per_cell;
    let mut mass = vec![KahanSum::<T>::new(); bins * bins];
    for (p, w) in finals.into_iter().flatten() {
        let b1 = ((p.q1 + lattice.half) / lattice.shift).floor();
        let b2 = ((p.q2 + lattice.half) / lattice.shift).floor();
        let limit = T::from_usize_lossy(bins);
        if b1 >= T::zero() && b1 < limit && b2 >= T::zero() && b2 < limit {
            let (b1, b2) = (b1.to_usize().unwrap(), b2.to_usize().unwrap());
            mass[b1 * bins + b2].add(w);
        }
    }
    let mass: Vec<T> = mass.iter().map(KahanSum::value).collect();

    let m = lattice.centres_per_axis;
    let s = lattice.shifts_per_cell;
    let cell_area = lattice.cell_side * lattice.cell_side;
    let mut rho = vec![T::zero(); m * m];
    for k1 in 0..m {
        for k2 in 0..m {
            let mut acc = KahanSum::new();
            for b1 in k1..k1 + s {
                for b2 in k2..k2 + s {
                    acc.add(mass[b1 * bins + b2]);
                }
            }
            rho[k1 * m + k2] = acc.value() / cell_area;
        }
    }

    // Equilibrium reference on the same overlapping cells.
    let qt_field = equilibrium_field(spec, t, partition);
    let smoothed_qt = smooth_density(&qt_field)?;
    Ok(SmoothedField { rho, ..smoothed_qt })
}

/// A field with `rho = rho_QT` at every grid point and no trajectories.
pub fn equilibrium_field<T: Real>(spec: &SuperpositionSpec<T>, t: T, partition: &CellPartition<T>) -> DensityField<T> {
    let rho_qt: Vec<T> = (0..partition.total_points())
        .into_par_iter()
        .map(|i| spec.rho_qt(partition.point(i), t))
        .collect();
    DensityField {
        time: t,
        partition: *partition,
        rho: rho_qt.clone(),
        valid: vec![true; rho_qt.len()],
        rho_qt,
        accuracy_fraction: T::one(),
    }
}
