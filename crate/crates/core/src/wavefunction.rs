//! Harmonic-oscillator eigenbasis, equal-weight superpositions and the
//! de Broglie velocity field (units with hbar = m = omega = 1).

use std::f64::consts::TAU;

use arrayvec::ArrayVec;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;

/// Highest eigenfunction order accepted by the default basis.
pub const DEFAULT_MAX_ORDER: usize = 64;

/// `|psi|^2` below which the velocity field is treated as singular.
pub const DEFAULT_NODE_THRESHOLD: f64 = 1e-30;

/// Seed of the bundled random-phase presets.
pub const DEFAULT_SEED: u64 = 7;

/// Largest supported `modes_per_axis`; the derivative of the top mode needs
/// one order beyond it.
pub const MAX_MODES_PER_AXIS: usize = DEFAULT_MAX_ORDER;

const SCRATCH: usize = MAX_MODES_PER_AXIS + 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveError {
    #[error("eigenfunction order {order} exceeds the configured maximum {max}")]
    OrderTooLarge { order: usize, max: usize },
    #[error("wave function node at ({q1}, {q2}): |psi|^2 = {density:e}")]
    Node { q1: f64, q2: f64, density: f64 },
    #[error("invalid superposition: {0}")]
    InvalidSpec(String),
}

/// A configuration `(q1, q2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub q1: T,
    pub q2: T,
}

impl<T: Real> Point2<T> {
    #[inline]
    pub fn new(q1: T, q2: T) -> Self {
        Self { q1, q2 }
    }

    #[inline]
    pub fn distance(&self, other: &Self) -> T {
        (self.q1 - other.q1).hypot(self.q2 - other.q2)
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.q1.is_finite() && self.q2.is_finite()
    }
}

/// One-dimensional oscillator eigenbasis `phi_m`, evaluated by the
/// normalized three-term recurrence so that no raw Hermite polynomial (and
/// no factorial) is ever formed.
#[derive(Debug, Clone, Copy)]
pub struct EigenBasis {
    pub max_order: usize,
}

impl Default for EigenBasis {
    fn default() -> Self {
        Self {
            max_order: DEFAULT_MAX_ORDER,
        }
    }
}

impl EigenBasis {
    fn check(&self, m: usize) -> Result<(), WaveError> {
        if m > self.max_order {
            return Err(WaveError::OrderTooLarge {
                order: m,
                max: self.max_order,
            });
        }
        Ok(())
    }

    pub fn eigenfunction<T: Real>(&self, m: usize, x: T) -> Result<T, WaveError> {
        self.check(m)?;
        let table = RecurrenceTable::new(m + 2);
        let mut values = ArrayVec::<T, SCRATCH>::new();
        table.fill(ground_amplitude(x), x, m + 1, &mut values);
        Ok(values[m])
    }

    /// `d phi_m / dx = sqrt(m/2) phi_{m-1} - sqrt((m+1)/2) phi_{m+1}`.
    pub fn eigenfunction_derivative<T: Real>(&self, m: usize, x: T) -> Result<T, WaveError> {
        self.check(m)?;
        let table = RecurrenceTable::new(m + 2);
        let mut values = ArrayVec::<T, SCRATCH>::new();
        table.fill(ground_amplitude(x), x, m + 2, &mut values);
        Ok(table.ladder(&values, m))
    }
}

/// `phi_m(x)` with the default order limit.
pub fn eigenfunction<T: Real>(m: usize, x: T) -> Result<T, WaveError> {
    EigenBasis::default().eigenfunction(m, x)
}

/// `phi_m'(x)` with the default order limit.
pub fn eigenfunction_derivative<T: Real>(m: usize, x: T) -> Result<T, WaveError> {
    EigenBasis::default().eigenfunction_derivative(m, x)
}

#[inline]
fn pi_quarter<T: Real>() -> T {
    T::PI().powf(T::lit(-0.25))
}

#[inline]
fn ground_amplitude<T: Real>(x: T) -> T {
    pi_quarter::<T>() * (-(x * x) * T::lit(0.5)).exp()
}

/// Coefficients of the normalized recurrence
/// `f_{k+1} = sqrt(2/(k+1)) x f_k - sqrt(k/(k+1)) f_{k-1}` and of the ladder
/// identity, tabulated once per scalar type and order limit.
#[derive(Debug, Clone, PartialEq)]
struct RecurrenceTable<T> {
    up: Vec<T>,
    down: Vec<T>,
    lower: Vec<T>,
    upper: Vec<T>,
    pi_quarter: T,
}

impl<T: Real> RecurrenceTable<T> {
    fn new(orders: usize) -> Self {
        let f = |k: usize| T::from_usize_lossy(k);
        let two = T::lit(2.0);
        let half = T::lit(0.5);
        Self {
            up: (0..orders).map(|k| (two / (f(k) + T::one())).sqrt()).collect(),
            down: (0..orders).map(|k| (f(k) / (f(k) + T::one())).sqrt()).collect(),
            lower: (0..orders).map(|m| (f(m) * half).sqrt()).collect(),
            upper: (0..orders).map(|m| ((f(m) + T::one()) * half).sqrt()).collect(),
            pi_quarter: pi_quarter(),
        }
    }

    /// Fills `out` with the first `count` recurrence terms seeded with `f_0`.
    #[inline]
    fn fill<const N: usize>(&self, f0: T, x: T, count: usize, out: &mut ArrayVec<T, N>) {
        out.clear();
        if count == 0 {
            return;
        }
        out.push(f0);
        if count == 1 {
            return;
        }
        out.push(self.up[0] * x * f0);
        for k in 1..count - 1 {
            let next = self.up[k] * x * out[k] - self.down[k] * out[k - 1];
            out.push(next);
        }
    }

    /// `sqrt(m/2) f_{m-1} - sqrt((m+1)/2) f_{m+1}`.
    #[inline]
    fn ladder(&self, values: &[T], m: usize) -> T {
        let lower = if m == 0 {
            T::zero()
        } else {
            self.lower[m] * values[m - 1]
        };
        lower - self.upper[m] * values[m + 1]
    }
}

/// Plain-data form of a phase set, as stored in phase files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDocument {
    pub modes_per_axis: usize,
    pub phases: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Equal-weight superposition of the first `modes_per_axis^2` product
/// eigenstates with phases `theta[m][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpositionSpec<T> {
    modes_per_axis: usize,
    phases: Vec<T>,
    weights: Vec<Complex<T>>,
    seed: Option<u64>,
    table: RecurrenceTable<T>,
}

impl<T: Real> SuperpositionSpec<T> {
    /// Builds a spec from a square phase matrix indexed `[m][n]`.
    pub fn new(phases: Vec<Vec<T>>) -> Result<Self, WaveError> {
        let k = phases.len();
        if k == 0 {
            return Err(WaveError::InvalidSpec("empty phase matrix".into()));
        }
        if k > MAX_MODES_PER_AXIS {
            return Err(WaveError::InvalidSpec(format!(
                "modes_per_axis {k} exceeds the supported maximum {MAX_MODES_PER_AXIS}"
            )));
        }
        let tau = T::lit(TAU);
        let mut flat = Vec::with_capacity(k * k);
        for (m, row) in phases.iter().enumerate() {
            if row.len() != k {
                return Err(WaveError::InvalidSpec(format!(
                    "phase row {m} has {} entries, expected {k}",
                    row.len()
                )));
            }
            for (n, &theta) in row.iter().enumerate() {
                if !theta.is_finite() || theta < T::zero() || theta >= tau {
                    return Err(WaveError::InvalidSpec(format!(
                        "phase[{m}][{n}] = {theta} is outside [0, 2pi)"
                    )));
                }
                flat.push(theta);
            }
        }
        let weights = flat
            .iter()
            .map(|&theta| Complex::new(theta.cos(), theta.sin()))
            .collect();
        Ok(Self {
            modes_per_axis: k,
            phases: flat,
            weights,
            seed: None,
            table: RecurrenceTable::new(k + 2),
        })
    }

    /// The ground state alone (`M = 1`, zero phase).
    pub fn ground_state() -> Self {
        Self::new(vec![vec![T::zero()]]).expect("valid ground state")
    }

    /// Four-mode state whose phases, in row-major `(m, n)` order, are
    /// 0.5442, 2.3099, 5.6703, 4.5333. Its trajectories are strongly confined.
    pub fn reference_m4() -> Self {
        Self::from_f64_rows(&[[0.5442, 2.3099], [5.6703, 4.5333]])
    }

    /// Four-mode state with weak confinement:
    /// `theta[0][0] = 0, theta[1][0] = 6.2782, theta[0][1] = 2.0865,
    /// theta[1][1] = 0.2582`.
    pub fn alternate_m4() -> Self {
        Self::from_f64_rows(&[[0.0, 2.0865], [6.2782, 0.2582]])
    }

    fn from_f64_rows<const K: usize>(rows: &[[f64; K]; K]) -> Self {
        Self::new(rows.iter().map(|r| r.iter().map(|&x| T::lit(x)).collect()).collect()).expect("valid built-in phases")
    }

    /// Phases drawn uniformly on `[0, 2pi)` from a seeded ChaCha8 stream.
    pub fn random(modes_per_axis: usize, seed: u64) -> Result<Self, WaveError> {
        if modes_per_axis == 0 {
            return Err(WaveError::InvalidSpec("modes_per_axis must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..modes_per_axis)
            .map(|_| (0..modes_per_axis).map(|_| T::lit(rng.gen_range(0.0..TAU))).collect())
            .collect();
        let mut spec = Self::new(rows)?;
        spec.seed = Some(seed);
        Ok(spec)
    }

    pub fn from_document(doc: &PhaseDocument) -> Result<Self, WaveError> {
        if doc.modes_per_axis != doc.phases.len() {
            return Err(WaveError::InvalidSpec(format!(
                "modes_per_axis = {} but the phase matrix has {} rows",
                doc.modes_per_axis,
                doc.phases.len()
            )));
        }
        let rows = doc
            .phases
            .iter()
            .map(|r| r.iter().map(|&x| T::lit(x)).collect())
            .collect();
        let mut spec = Self::new(rows)?;
        spec.seed = doc.seed;
        Ok(spec)
    }

    pub fn to_document(&self) -> PhaseDocument {
        let k = self.modes_per_axis;
        PhaseDocument {
            modes_per_axis: k,
            phases: (0..k)
                .map(|m| (0..k).map(|n| self.phase(m, n).as_f64()).collect())
                .collect(),
            seed: self.seed,
        }
    }

    #[inline]
    pub fn modes_per_axis(&self) -> usize {
        self.modes_per_axis
    }

    /// Number of superposed product states `M`.
    #[inline]
    pub fn mode_count(&self) -> usize {
        self.modes_per_axis * self.modes_per_axis
    }

    #[inline]
    pub fn phase(&self, m: usize, n: usize) -> T {
        self.phases[m * self.modes_per_axis + n]
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `psi(q1, q2, t)`.
    pub fn psi(&self, p: Point2<T>, t: T) -> Complex<T> {
        let k = self.modes_per_axis;
        let mut phi1 = ArrayVec::<T, SCRATCH>::new();
        let mut phi2 = ArrayVec::<T, SCRATCH>::new();
        self.table.fill(ground_amplitude(p.q1), p.q1, k, &mut phi1);
        self.table.fill(ground_amplitude(p.q2), p.q2, k, &mut phi2);
        // One energy phase per level E = m + n + 1, evaluated directly so
        // that psi(t + 2pi) = psi(t) to rounding.
        let mut energy_phase = ArrayVec::<Complex<T>, { 2 * SCRATCH }>::new();
        for level in 0..2 * k - 1 {
            let angle = -T::from_usize_lossy(level + 1) * t;
            energy_phase.push(Complex::new(angle.cos(), angle.sin()));
        }
        let mut sum = Complex::new(T::zero(), T::zero());
        for m in 0..k {
            let mut inner = Complex::new(T::zero(), T::zero());
            for n in 0..k {
                inner = inner + self.weights[m * k + n] * energy_phase[m + n] * phi2[n];
            }
            sum = sum + inner * phi1[m];
        }
        sum / T::from_usize_lossy(self.mode_count()).sqrt()
    }

    /// Equilibrium density `|psi|^2`.
    #[inline]
    pub fn rho_qt(&self, p: Point2<T>, t: T) -> T {
        self.psi(p, t).norm_sqr()
    }

    /// de Broglie velocity `Im(grad psi / psi)` with the default node threshold.
    pub fn velocity(&self, p: Point2<T>, t: T) -> Result<(T, T), WaveError> {
        self.velocity_with_threshold(p, t, T::lit(DEFAULT_NODE_THRESHOLD))
    }

    /// de Broglie velocity, failing when `|psi|^2 < node_threshold`.
    ///
    /// The Gaussian envelope and the global phase `e^{-it}` cancel in
    /// `grad psi / psi`, so only the polynomial parts of the eigenfunctions
    /// (the same recurrence seeded with `pi^{-1/4}`) enter the sums.
    pub fn velocity_with_threshold(&self, p: Point2<T>, t: T, node_threshold: T) -> Result<(T, T), WaveError> {
        let k = self.modes_per_axis;
        let table = &self.table;
        let mut h1 = ArrayVec::<T, SCRATCH>::new();
        let mut h2 = ArrayVec::<T, SCRATCH>::new();
        table.fill(table.pi_quarter, p.q1, k + 1, &mut h1);
        table.fill(table.pi_quarter, p.q2, k + 1, &mut h2);
        let dh1: ArrayVec<T, SCRATCH> = (0..k).map(|m| table.ladder(&h1, m)).collect();
        let dh2: ArrayVec<T, SCRATCH> = (0..k).map(|n| table.ladder(&h2, n)).collect();

        let w = Complex::new(t.cos(), -t.sin());
        let mut powers = ArrayVec::<Complex<T>, { 2 * SCRATCH }>::new();
        powers.push(Complex::new(T::one(), T::zero()));
        for level in 1..2 * k - 1 {
            let prev = powers[level - 1];
            powers.push(prev * w);
        }

        let zero = Complex::new(T::zero(), T::zero());
        let (mut s, mut d1, mut d2) = (zero, zero, zero);
        for m in 0..k {
            let mut a = zero;
            let mut b = zero;
            for n in 0..k {
                let c = self.weights[m * k + n] * powers[m + n];
                a = a + c * h2[n];
                b = b + c * dh2[n];
            }
            s = s + a * h1[m];
            d1 = d1 + a * dh1[m];
            d2 = d2 + b * h1[m];
        }

        let amp2 = s.norm_sqr();
        let r2 = p.q1 * p.q1 + p.q2 * p.q2;
        let mode_count = T::from_usize_lossy(self.mode_count());
        // Inside radius^2 = 40 the envelope e^{-r^2} exceeds e^{-40}, so a
        // large enough polynomial part clears the threshold without an exp.
        let clear = r2 < T::lit(40.0) && amp2 * T::lit(4.248354255291589e-18) >= node_threshold * mode_count;
        if amp2 == T::zero() || !clear && !(amp2 * (-r2).exp() / mode_count >= node_threshold) {
            let density = amp2 * (-r2).exp() / mode_count;
            return Err(WaveError::Node {
                q1: p.q1.as_f64(),
                q2: p.q2.as_f64(),
                density: density.as_f64(),
            });
        }
        // Im(d / s) = Im(d * conj(s)) / |s|^2
        let v1 = (d1.im * s.re - d1.re * s.im) / amp2;
        let v2 = (d2.im * s.re - d2.re * s.im) / amp2;
        Ok((v1, v2))
    }
}

/// Ground-state equilibrium density `phi_0(q1)^2 phi_0(q2)^2`, the
/// nonequilibrium initial condition.
#[inline]
pub fn rho_initial<T: Real>(p: Point2<T>) -> T {
    (-(p.q1 * p.q1 + p.q2 * p.q2)).exp() / T::PI()
}
