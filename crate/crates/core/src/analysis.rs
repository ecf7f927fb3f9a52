//! Fitting `a exp(-b t/2pi) + c` to H-function series, saturation time,
//! and log-scale series.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{KahanSum, Real};

/// Floor of the saturation band around the residue.
pub const SATURATION_BAND_FLOOR: f64 = 0.02;

/// Decay-rate search range (per period).
pub const DECAY_RATE_RANGE: (f64, f64) = (1e-4, 1e2);

const COARSE_SCAN_POINTS: usize = 2001;
const GOLDEN_RELATIVE_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError<T: Real> {
    #[error("series needs at least {needed} entries, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series must start at t = 0 (first time is {0})")]
    NotAnchoredAtZero(f64),
    #[error("degenerate series: {0}")]
    DegenerateSeries(&'static str),
    #[error("non-positive mean H at entry {index}; log series truncated")]
    NonPositiveValue { index: usize, prefix: Vec<LogPoint<T>> },
}

/// One time of an H-function series: values from each sampling grid and
/// their summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HBarEntry<T> {
    pub time: T,
    pub periods: T,
    pub values: Vec<T>,
    pub mean: T,
    pub min: T,
    pub max: T,
    pub accuracy_min: T,
}

impl<T: Real> HBarEntry<T> {
    pub fn new(time: T, values: Vec<T>, accuracy_min: T) -> Self {
        let n = T::from_usize_lossy(values.len().max(1));
        let mean = values.iter().copied().sum::<T>() / n;
        let min = values.iter().copied().fold(T::infinity(), T::min);
        let max = values.iter().copied().fold(T::neg_infinity(), T::max);
        Self {
            time,
            periods: time / T::lit(TAU),
            values,
            mean,
            min,
            max,
            accuracy_min,
        }
    }

    /// Spread of the grid values (`max - min`).
    pub fn spread(&self) -> T {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HBarSeries<T> {
    pub entries: Vec<HBarEntry<T>>,
}

impl<T: Real> HBarSeries<T> {
    /// A series with a single value per time (no grid spread).
    pub fn from_means(times: &[T], means: &[T]) -> Self {
        Self {
            entries: times
                .iter()
                .zip(means)
                .map(|(&t, &v)| HBarEntry::new(t, vec![v], T::one()))
                .collect(),
        }
    }

    pub fn is_time_ordered(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].time < w[1].time)
    }
}

/// Fitted `a exp(-b periods) + c`, constrained through the first value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub rms_residual: T,
    pub t_sat: Option<T>,
}

impl<T: Real> FitResult<T> {
    pub fn model(&self, periods: T) -> T {
        self.a * (-self.b * periods).exp() + self.c
    }
}

struct Profile<'a, T> {
    x: &'a [T],
    y: &'a [T],
    y0: T,
}

impl<T: Real> Profile<'_, T> {
    /// Optimal residue `c >= 0` for a fixed decay rate, and the resulting
    /// sum of squared residuals. With `a = y0 - c` the model is linear in
    /// `c`: `y0 e^{-bx} + c (1 - e^{-bx})`.
    fn solve(&self, b: T) -> (T, T) {
        let mut num = KahanSum::new();
        let mut den = KahanSum::new();
        for (&x, &y) in self.x.iter().zip(self.y) {
            let e = (-b * x).exp();
            let g = T::one() - e;
            num.add(g * (y - self.y0 * e));
            den.add(g * g);
        }
        let den = den.value();
        let c = if den > T::zero() {
            (num.value() / den).max(T::zero())
        } else {
            T::zero()
        };
        (c, self.sse(b, c))
    }

    fn sse(&self, b: T, c: T) -> T {
        let mut acc = KahanSum::new();
        let a = self.y0 - c;
        for (&x, &y) in self.x.iter().zip(self.y) {
            let r = y - (a * (-b * x).exp() + c);
            acc.add(r * r);
        }
        acc.value()
    }
}

/// Least-squares fit of the grid means to `a exp(-b periods) + c` with
/// `a + c` pinned to the value at `t = 0`: a logarithmic scan over `b`
/// (with `c` solved in closed form at each `b`), refined by golden-section
/// search.
pub fn fit_exponential<T: Real>(series: &HBarSeries<T>) -> Result<FitResult<T>, AnalysisError<T>> {
    let entries = &series.entries;
    if entries.len() < 4 {
        return Err(AnalysisError::TooShort {
            needed: 4,
            got: entries.len(),
        });
    }
    if entries[0].time != T::zero() {
        return Err(AnalysisError::NotAnchoredAtZero(entries[0].time.as_f64()));
    }
    let x: Vec<T> = entries.iter().map(|e| e.periods).collect();
    let y: Vec<T> = entries.iter().map(|e| e.mean).collect();
    let y0 = y[0];
    if !(y0 > T::zero()) {
        return Err(AnalysisError::DegenerateSeries("H(0) must be positive"));
    }
    if y.iter().all(|&v| v == y0) {
        return Err(AnalysisError::DegenerateSeries("all values are equal"));
    }
    let profile = Profile { x: &x, y: &y, y0 };

    let (lo, hi) = (DECAY_RATE_RANGE.0.ln(), DECAY_RATE_RANGE.1.ln());
    let step = (hi - lo) / (COARSE_SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..COARSE_SCAN_POINTS).map(|i| lo + step * i as f64).collect();
    let mut best = 0usize;
    let mut best_sse = T::infinity();
    for (i, &u) in grid.iter().enumerate() {
        let (_, sse) = profile.solve(T::lit(u.exp()));
        if sse < best_sse {
            best_sse = sse;
            best = i;
        }
    }

    // Golden-section search in log(b) on the bracketing scan cells.
    let mut a = T::lit(grid[best.saturating_sub(1)]);
    let mut d = T::lit(grid[(best + 1).min(grid.len() - 1)]);
    let objective = |u: T| profile.solve(u.exp()).1;
    let inv_phi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut b = d - inv_phi * (d - a);
    let mut c = a + inv_phi * (d - a);
    let mut fb = objective(b);
    let mut fc = objective(c);
    let tol = T::lit(GOLDEN_RELATIVE_WIDTH);
    for _ in 0..200 {
        let mid = (a + d) * T::lit(0.5);
        if (d - a).abs() <= tol * mid.abs().max(T::one()) {
            break;
        }
        if fb <= fc {
            d = c;
            c = b;
            fc = fb;
            b = d - inv_phi * (d - a);
            fb = objective(b);
        } else {
            a = b;
            b = c;
            fb = fc;
            c = a + inv_phi * (d - a);
            fc = objective(c);
        }
    }
    let u = if fb <= fc { b } else { c };
    let (mut rate, mut sse) = (u.exp(), fb.min(fc));
    let (mut residue, _) = profile.solve(rate);
    // The refinement never loses against the best scan point.
    if best_sse < sse {
        rate = T::lit(grid[best].exp());
        residue = profile.solve(rate).0;
        sse = best_sse;
    }
    let n = T::from_usize_lossy(y.len());
    let mut fit = FitResult {
        a: y0 - residue,
        b: rate,
        c: residue,
        rms_residual: (sse / n).sqrt(),
        t_sat: None,
    };
    fit.t_sat = saturation_time(series, &fit);
    Ok(fit)
}

/// Earliest series time after which every mean stays within
/// `max(2 * spread, 0.02)` of the fitted residue.
pub fn saturation_time<T: Real>(series: &HBarSeries<T>, fit: &FitResult<T>) -> Option<T> {
    let floor = T::lit(SATURATION_BAND_FLOOR);
    let inside = |e: &HBarEntry<T>| {
        let band = (T::lit(2.0) * e.spread()).max(floor);
        (e.mean - fit.c).abs() <= band
    };
    let mut first = None;
    for e in series.entries.iter().rev() {
        if inside(e) {
            first = Some(e.time);
        } else {
            break;
        }
    }
    first
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPoint<T> {
    pub time: T,
    pub ln_mean: T,
    /// `ln` of the smallest grid value; `-inf` when that value is not positive.
    pub ln_min: T,
    pub ln_max: T,
}

/// Natural logs of the means and grid extremes.
pub fn log_series<T: Real>(series: &HBarSeries<T>) -> Result<Vec<LogPoint<T>>, AnalysisError<T>> {
    let safe_ln = |v: T| if v > T::zero() { v.ln() } else { T::neg_infinity() };
    let mut out = Vec::with_capacity(series.entries.len());
    for (index, e) in series.entries.iter().enumerate() {
        if !(e.mean > T::zero()) {
            return Err(AnalysisError::NonPositiveValue { index, prefix: out });
        }
        out.push(LogPoint {
            time: e.time,
            ln_mean: e.mean.ln(),
            ln_min: safe_ln(e.min),
            ln_max: safe_ln(e.max),
        });
    }
    Ok(out)
}

/// Ordinary least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit<T> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

pub fn linear_fit<T: Real>(x: &[T], y: &[T]) -> LineFit<T> {
    let n = T::from_usize_lossy(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    let mut syy = T::zero();
    for (&xi, &yi) in x.iter().zip(y) {
        sxx = sxx + (xi - mx) * (xi - mx);
        sxy = sxy + (xi - mx) * (yi - my);
        syy = syy + (yi - my) * (yi - my);
    }
    let slope = sxy / sxx;
    let r_squared = if syy > T::zero() {
        sxy * sxy / (sxx * syy)
    } else {
        T::one()
    };
    LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(a: f64, b: f64, c: f64, k_max: usize) -> HBarSeries<f64> {
        let times: Vec<f64> = (0..=k_max).map(|k| k as f64 * TAU).collect();
        let means: Vec<f64> = (0..=k_max).map(|k| a * (-b * k as f64).exp() + c).collect();
        HBarSeries::from_means(&times, &means)
    }

    #[test]
    fn recovers_exact_model() {
        let fit = fit_exponential(&synthetic(0.5, 0.3, 0.07, 20)).unwrap();
        assert!((fit.a - 0.5).abs() < 1e-6, "{fit:?}");
        assert!((fit.b - 0.3).abs() < 1e-6);
        assert!((fit.c - 0.07).abs() < 1e-6);
        assert!(fit.rms_residual < 1e-8);
        assert!((fit.a + fit.c - 0.57).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_series() {
        let flat = HBarSeries::from_means(&[0.0, 1.0, 2.0, 3.0], &[0.2; 4]);
        assert!(matches!(
            fit_exponential(&flat),
            Err(AnalysisError::DegenerateSeries(_))
        ));
        let negative = HBarSeries::from_means(&[0.0, 1.0, 2.0, 3.0], &[0.0, 0.1, 0.2, 0.3]);
        assert!(fit_exponential(&negative).is_err());
        let short = HBarSeries::from_means(&[0.0, 1.0], &[0.5, 0.1]);
        assert!(matches!(fit_exponential(&short), Err(AnalysisError::TooShort { .. })));
        let late = HBarSeries::from_means(&[1.0, 2.0, 3.0, 4.0], &[0.5, 0.4, 0.3, 0.2]);
        assert!(matches!(
            fit_exponential(&late),
            Err(AnalysisError::NotAnchoredAtZero(_))
        ));
    }

    #[test]
    fn residue_is_clamped_nonnegative() {
        // Decays below zero: the unconstrained residue would be negative.
        let fit = fit_exponential(&synthetic(0.6, 0.4, -0.05, 15)).unwrap();
        assert_eq!(fit.c, 0.0);
        assert!((fit.a - 0.55).abs() < 1e-12);
        assert!(fit.b >= 0.0);
    }

    #[test]
    fn constant_series_saturates_immediately() {
        let s = HBarSeries::from_means(&[0.0, 1.0, 2.0], &[0.1, 0.1, 0.1]);
        let fit = FitResult {
            a: 0.0,
            b: 1.0,
            c: 0.1,
            rms_residual: 0.0,
            t_sat: None,
        };
        assert_eq!(saturation_time(&s, &fit), Some(0.0));
    }

    #[test]
    fn saturation_of_pure_exponential() {
        // First k with 0.5 e^{-0.3 k} <= 0.02 is k = 11 (ln 25 / 0.3 = 10.73).
        let fit = fit_exponential(&synthetic(0.5, 0.3, 0.0, 20)).unwrap();
        assert!(fit.c.abs() < 1e-9);
        let t_sat = fit.t_sat.unwrap();
        assert!((t_sat - 11.0 * TAU).abs() < 1e-9);
        // Sampled over three time constants only, the band is never reached.
        let short = synthetic(0.5, 0.3, 0.0, 10);
        let fit = fit_exponential(&short).unwrap();
        assert_eq!(saturation_time(&short, &fit), None);
    }

    #[test]
    fn log_series_values() {
        let s = HBarSeries::from_means(&[0.0, 1.0, 2.0], &[1.0, (-1.0f64).exp(), (-2.0f64).exp()]);
        let logs = log_series(&s).unwrap();
        assert_eq!(logs[0].ln_mean, 0.0);
        let x: Vec<f64> = logs.iter().map(|p| p.time).collect();
        let y: Vec<f64> = logs.iter().map(|p| p.ln_mean).collect();
        let line = linear_fit(&x, &y);
        assert!((line.slope + 1.0).abs() < 1e-14);
        assert!((line.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn log_series_truncates_at_nonpositive_mean() {
        let s = HBarSeries::from_means(&[0.0, 1.0, 2.0], &[0.5, 0.1, -0.001]);
        match log_series(&s) {
            Err(AnalysisError::NonPositiveValue { index, prefix }) => {
                assert_eq!(index, 2);
                assert_eq!(prefix.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn entry_statistics() {
        let e = HBarEntry::new(TAU, vec![0.3, 0.1, 0.2], 0.99);
        assert_eq!(e.periods, 1.0);
        assert_eq!(e.min, 0.1);
        assert_eq!(e.max, 0.3);
        assert!((e.mean - 0.2).abs() < 1e-15);
        assert!((e.spread() - 0.2).abs() < 1e-15);
    }
}
