//! Relaxation to quantum equilibrium in pilot-wave dynamics of the
//! two-dimensional harmonic oscillator.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); the aliases at the crate root fix it to `f64`, which
//! is what every production run uses.

// `!(x > 0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod confinement;
pub mod density;
pub mod integrator;
pub mod io;
pub mod num;
pub mod wavefunction;

pub use num::Real;

pub type Point = wavefunction::Point2<f64>;
pub type Superposition = wavefunction::SuperpositionSpec<f64>;
pub type IntegratorConfig = integrator::IntegratorConfig<f64>;
pub type TrajectoryOutcome = integrator::TrajectoryOutcome<f64>;
pub type CellPartition = density::CellPartition<f64>;
pub type DensityField = density::DensityField<f64>;
pub type CoarseField = density::CoarseField<f64>;
pub type SmoothedField = density::SmoothedField<f64>;
pub type DensityError = density::DensityError<f64>;
pub type HBarEntry = analysis::HBarEntry<f64>;
pub type HBarSeries = analysis::HBarSeries<f64>;
pub type FitResult = analysis::FitResult<f64>;
pub type TrajectoryTrace = confinement::TrajectoryTrace<f64>;
pub type SquareFate = confinement::SquareFate<f64>;

pub use density::InitialDensity;
pub use integrator::TrajectoryStatus;
pub use wavefunction::{PhaseDocument, WaveError};
