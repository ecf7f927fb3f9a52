//! Adaptive Runge-Kutta-Fehlberg 4(5) integration of de Broglie
//! trajectories, forwards or backwards in time, under fixed step budgets.

use serde::{Deserialize, Serialize};

use crate::num::Real;
use crate::wavefunction::{Point2, SuperpositionSpec, DEFAULT_NODE_THRESHOLD};

/// Tolerances and step budgets for a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig<T> {
    /// End-to-end position precision certified by round-trip validation.
    pub position_tolerance: T,
    /// Bound on the embedded error estimate per unit of integrated time.
    pub local_error_tolerance: T,
    pub max_steps_total: u64,
    pub sub_intervals: u32,
    pub max_steps_per_sub_interval: u64,
    pub min_step: T,
    pub initial_step: T,
    /// `|psi|^2` below which a velocity evaluation counts as a node hit.
    pub node_threshold: T,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            position_tolerance: T::lit(0.025),
            local_error_tolerance: T::lit(1e-8),
            max_steps_total: 10_000_000,
            sub_intervals: 10,
            max_steps_per_sub_interval: 1_000_000,
            min_step: T::lit(1e-12),
            initial_step: T::lit(1e-3),
            node_threshold: T::lit(DEFAULT_NODE_THRESHOLD),
        }
    }
}

impl<T: Real> IntegratorConfig<T> {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("position_tolerance", self.position_tolerance),
            ("local_error_tolerance", self.local_error_tolerance),
            ("min_step", self.min_step),
            ("initial_step", self.initial_step),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(format!("{name} must be a positive finite number, got {v}"));
            }
        }
        if !(self.node_threshold >= T::zero()) {
            return Err("node_threshold must be nonnegative".into());
        }
        if self.min_step >= self.initial_step {
            return Err("min_step must be smaller than initial_step".into());
        }
        if self.sub_intervals == 0 {
            return Err("sub_intervals must be at least 1".into());
        }
        if self.max_steps_per_sub_interval == 0 || self.max_steps_total == 0 {
            return Err("step budgets must be positive".into());
        }
        Ok(())
    }

    /// Same config with a different per-step tolerance.
    pub fn with_local_tolerance(mut self, tol: T) -> Self {
        self.local_error_tolerance = tol;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryStatus {
    Succeeded,
    StepBudgetExceeded,
    NodeEncountered,
    StepUnderflow,
}

impl TrajectoryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Succeeded => "succeeded",
            Self::StepBudgetExceeded => "step_budget_exceeded",
            Self::NodeEncountered => "node_encountered",
            Self::StepUnderflow => "step_underflow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOutcome<T> {
    pub status: TrajectoryStatus,
    /// Final position; the last reached point when the status is a failure.
    pub endpoint: Point2<T>,
    pub steps_used: u64,
}

impl<T> TrajectoryOutcome<T> {
    pub fn succeeded(&self) -> bool {
        self.status == TrajectoryStatus::Succeeded
    }

    /// The endpoint, only when the trajectory was integrated successfully.
    pub fn endpoint(&self) -> Option<&Point2<T>> {
        self.succeeded().then_some(&self.endpoint)
    }
}

// Fehlberg 4(5) tableau.
const C: [f64; 6] = [0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5];
const A2: [f64; 1] = [0.25];
const A3: [f64; 2] = [3.0 / 32.0, 9.0 / 32.0];
const A4: [f64; 3] = [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0];
const A5: [f64; 4] = [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0];
const A6: [f64; 5] = [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const E: [f64; 6] = [
    1.0 / 360.0,
    0.0,
    -128.0 / 4275.0,
    -2197.0 / 75240.0,
    1.0 / 50.0,
    2.0 / 55.0,
];

#[derive(Clone, Copy)]
struct Tableau<T> {
    c: [T; 6],
    a2: [T; 1],
    a3: [T; 2],
    a4: [T; 3],
    a5: [T; 4],
    a6: [T; 5],
    b5: [T; 6],
    e: [T; 6],
}

impl<T: Real> Tableau<T> {
    fn new() -> Self {
        fn conv<T: Real, const N: usize>(x: [f64; N]) -> [T; N] {
            x.map(T::lit)
        }
        Self {
            c: conv(C),
            a2: conv(A2),
            a3: conv(A3),
            a4: conv(A4),
            a5: conv(A5),
            a6: conv(A6),
            b5: conv(B5),
            e: conv(E),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Failure {
    Budget,
    Node,
    Underflow,
}

impl From<Failure> for TrajectoryStatus {
    fn from(f: Failure) -> Self {
        match f {
            Failure::Budget => Self::StepBudgetExceeded,
            Failure::Node => Self::NodeEncountered,
            Failure::Underflow => Self::StepUnderflow,
        }
    }
}

/// Integration state carried across stops within one trajectory.
struct Stepper<'a, T> {
    spec: &'a SuperpositionSpec<T>,
    cfg: &'a IntegratorConfig<T>,
    tab: Tableau<T>,
    t: T,
    q: Point2<T>,
    /// Nominal step magnitude.
    h: T,
    /// +1 forwards, -1 backwards.
    dir: T,
    steps_total: u64,
    steps_sub: u64,
}

impl<'a, T: Real> Stepper<'a, T> {
    fn new(spec: &'a SuperpositionSpec<T>, cfg: &'a IntegratorConfig<T>, start: Point2<T>, t: T, dir: T) -> Self {
        Self {
            spec,
            cfg,
            tab: Tableau::new(),
            t,
            q: start,
            h: cfg.initial_step,
            dir,
            steps_total: 0,
            steps_sub: 0,
        }
    }

    #[inline]
    fn field(&self, t: T, q: Point2<T>) -> Result<(T, T), Failure> {
        self.spec
            .velocity_with_threshold(q, t, self.cfg.node_threshold)
            .map_err(|_| Failure::Node)
    }

    #[inline]
    fn count_step(&mut self) -> Result<(), Failure> {
        if self.steps_sub >= self.cfg.max_steps_per_sub_interval || self.steps_total >= self.cfg.max_steps_total {
            return Err(Failure::Budget);
        }
        self.steps_sub += 1;
        self.steps_total += 1;
        Ok(())
    }

    /// One RKF trial step of signed size `h`; returns the fifth-order
    /// solution and the embedded error norm.
    #[inline]
    fn trial(&self, h: T) -> Result<(Point2<T>, T), Failure> {
        let tab = &self.tab;
        let (t, q) = (self.t, self.q);
        let at = |k: &[(T, T)], w: &[T]| {
            let mut d1 = T::zero();
            let mut d2 = T::zero();
            for (ki, &wi) in k.iter().zip(w) {
                d1 = d1 + wi * ki.0;
                d2 = d2 + wi * ki.1;
            }
            Point2::new(q.q1 + h * d1, q.q2 + h * d2)
        };
        let mut k = [(T::zero(), T::zero()); 6];
        k[0] = self.field(t, q)?;
        k[1] = self.field(t + tab.c[1] * h, at(&k[..1], &tab.a2))?;
        k[2] = self.field(t + tab.c[2] * h, at(&k[..2], &tab.a3))?;
        k[3] = self.field(t + tab.c[3] * h, at(&k[..3], &tab.a4))?;
        k[4] = self.field(t + tab.c[4] * h, at(&k[..4], &tab.a5))?;
        k[5] = self.field(t + tab.c[5] * h, at(&k[..5], &tab.a6))?;
        let next = at(&k, &tab.b5);
        let mut e1 = T::zero();
        let mut e2 = T::zero();
        for (ki, &ei) in k.iter().zip(&tab.e) {
            e1 = e1 + ei * ki.0;
            e2 = e2 + ei * ki.1;
        }
        let err = (h * e1).hypot(h * e2);
        Ok((next, err))
    }

    /// Advances exactly to `target` (which lies ahead in direction `dir`).
    fn advance_to(&mut self, target: T) -> Result<(), Failure> {
        let tol = self.cfg.local_error_tolerance;
        let two = T::lit(2.0);
        let safety = T::lit(0.9);
        let fifth = T::lit(0.2);
        loop {
            let remaining = (target - self.t) * self.dir;
            if remaining <= T::zero() {
                self.t = target;
                return Ok(());
            }
            let clamped = self.h >= remaining;
            let mag = if clamped { remaining } else { self.h };
            self.count_step()?;
            let (next, err) = self.trial(mag * self.dir)?;
            // The last sliver of a span may be shorter than min_step; it is
            // always accepted.
            let sliver = clamped && remaining < self.cfg.min_step;
            if err <= tol * mag || sliver {
                self.q = next;
                self.t = if clamped { target } else { self.t + mag * self.dir };
                let factor = if err > T::zero() {
                    two.min(safety * (tol * mag / err).powf(fifth))
                } else {
                    two
                };
                let proposed = mag * factor;
                if !clamped || proposed < self.h {
                    self.h = proposed;
                }
                if !self.q.is_finite() {
                    return Err(Failure::Node);
                }
            } else {
                self.h = mag * T::lit(0.5);
                if self.h < self.cfg.min_step {
                    return Err(Failure::Underflow);
                }
            }
        }
    }
}

/// Integrates `dq/dt = v(q, t)` from `t_from` to `t_to` (either order).
pub fn integrate<T: Real>(
    spec: &SuperpositionSpec<T>,
    start: Point2<T>,
    t_from: T,
    t_to: T,
    cfg: &IntegratorConfig<T>,
) -> TrajectoryOutcome<T> {
    integrate_sampled(spec, start, t_from, t_to, cfg, &[], |_, _| {})
}

/// As [`integrate`], additionally reporting the state at each time in
/// `stops` (which must be ordered along the direction of integration and
/// lie within the span). Stops are landed on exactly.
pub fn integrate_sampled<T: Real, F: FnMut(T, Point2<T>)>(
    spec: &SuperpositionSpec<T>,
    start: Point2<T>,
    t_from: T,
    t_to: T,
    cfg: &IntegratorConfig<T>,
    stops: &[T],
    mut observe: F,
) -> TrajectoryOutcome<T> {
    if t_from == t_to {
        for &s in stops {
            observe(s, start);
        }
        return TrajectoryOutcome {
            status: TrajectoryStatus::Succeeded,
            endpoint: start,
            steps_used: 0,
        };
    }
    let dir = if t_to > t_from { T::one() } else { -T::one() };
    let mut stepper = Stepper::new(spec, cfg, start, t_from, dir);
    let n_sub = cfg.sub_intervals.max(1);
    let span = t_to - t_from;
    let mut next_stop = 0usize;

    let result: Result<(), Failure> = (|| {
        for i in 1..=n_sub {
            let sub_end = if i == n_sub {
                t_to
            } else {
                t_from + span * T::from_u32(i).unwrap() / T::from_u32(n_sub).unwrap()
            };
            stepper.steps_sub = 0;
            while next_stop < stops.len() && (sub_end - stops[next_stop]) * dir >= T::zero() {
                let s = stops[next_stop];
                stepper.advance_to(s)?;
                observe(s, stepper.q);
                next_stop += 1;
            }
            stepper.advance_to(sub_end)?;
        }
        Ok(())
    })();

    TrajectoryOutcome {
        status: match result {
            Ok(()) => TrajectoryStatus::Succeeded,
            Err(f) => f.into(),
        },
        endpoint: stepper.q,
        steps_used: stepper.steps_total,
    }
}

/// Follows the trajectory through `p_at_t` at time `t` back to `t = 0`.
pub fn backtrack<T: Real>(
    spec: &SuperpositionSpec<T>,
    p_at_t: Point2<T>,
    t: T,
    cfg: &IntegratorConfig<T>,
) -> TrajectoryOutcome<T> {
    integrate(spec, p_at_t, t, T::zero(), cfg)
}

/// Round-trip displacement: backtrack `p` from `t` to 0, integrate the
/// endpoint forwards to `t` again, and measure the distance to `p`.
pub fn validate_precision<T: Real>(
    spec: &SuperpositionSpec<T>,
    p: Point2<T>,
    t: T,
    cfg: &IntegratorConfig<T>,
) -> Result<T, TrajectoryStatus> {
    let back = backtrack(spec, p, t, cfg);
    if !back.succeeded() {
        return Err(back.status);
    }
    let fwd = integrate(spec, back.endpoint, T::zero(), t, cfg);
    if !fwd.succeeded() {
        return Err(fwd.status);
    }
    Ok(fwd.endpoint.distance(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ground_state_is_stationary() {
        let spec = SuperpositionSpec::<f64>::ground_state();
        let start = Point2::new(1.2, -0.4);
        let out = integrate(&spec, start, 0.0, 10.0 * PI, &IntegratorConfig::default());
        assert!(out.succeeded());
        assert_eq!(out.endpoint, start);
        assert!(out.steps_used > 0);
    }

    #[test]
    fn empty_span_uses_no_steps() {
        let spec = SuperpositionSpec::<f64>::reference_m4();
        let p = Point2::new(0.3, 0.1);
        let out = backtrack(&spec, p, 0.0, &IntegratorConfig::default());
        assert_eq!(out.status, TrajectoryStatus::Succeeded);
        assert_eq!(out.endpoint, p);
        assert_eq!(out.steps_used, 0);
    }

    #[test]
    fn tiny_budget_is_reported() {
        let spec = SuperpositionSpec::<f64>::reference_m4();
        let cfg = IntegratorConfig {
            max_steps_per_sub_interval: 5,
            ..Default::default()
        };
        let out = integrate(&spec, Point2::new(1.0, 0.5), 0.0, 2.0 * PI, &cfg);
        assert_eq!(out.status, TrajectoryStatus::StepBudgetExceeded);
        assert!(out.steps_used <= 5);
        assert!(out.endpoint().is_none());

        let cfg = IntegratorConfig {
            max_steps_total: 7,
            ..Default::default()
        };
        let out = integrate(&spec, Point2::new(1.0, 0.5), 0.0, 2.0 * PI, &cfg);
        assert_eq!(out.status, TrajectoryStatus::StepBudgetExceeded);
        assert_eq!(out.steps_used, 7);
    }

    #[test]
    fn underflow_when_tolerance_unreachable() {
        let spec = SuperpositionSpec::<f64>::reference_m4();
        let cfg = IntegratorConfig {
            local_error_tolerance: 1e-300,
            min_step: 1e-6,
            ..Default::default()
        };
        let out = integrate(&spec, Point2::new(1.0, 0.5), 0.0, 1.0, &cfg);
        assert_eq!(out.status, TrajectoryStatus::StepUnderflow);
    }

    #[test]
    fn node_far_out_is_reported() {
        let spec = SuperpositionSpec::<f64>::reference_m4();
        let out = integrate(&spec, Point2::new(9.5, 0.0), 0.0, 1.0, &IntegratorConfig::default());
        assert_eq!(out.status, TrajectoryStatus::NodeEncountered);
    }

    #[test]
    fn stops_are_hit_in_order() {
        let spec = SuperpositionSpec::<f64>::reference_m4();
        let stops: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let mut seen = Vec::new();
        let out = integrate_sampled(
            &spec,
            Point2::new(0.5, 0.0),
            0.0,
            2.0,
            &IntegratorConfig::default(),
            &stops,
            |t, _| seen.push(t),
        );
        assert!(out.succeeded());
        assert_eq!(seen, stops);
        let plain = integrate(&spec, Point2::new(0.5, 0.0), 0.0, 2.0, &IntegratorConfig::default());
        assert!(plain.endpoint.distance(&out.endpoint) < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::<f64>::default().validate().is_ok());
        let bad = IntegratorConfig::<f64> {
            min_step: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = IntegratorConfig::<f64> {
            local_error_tolerance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let d = IntegratorConfig::<f64>::default();
        assert_eq!(d.sub_intervals as u64 * d.max_steps_per_sub_interval, d.max_steps_total);
    }
}
