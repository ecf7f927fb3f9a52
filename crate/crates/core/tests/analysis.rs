use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relax::analysis::{fit_exponential, linear_fit, log_series, saturation_time, AnalysisError};
use relax::io::{read_series_csv, write_series_csv};
use relax::{FitResult, HBarEntry, HBarSeries};
use std::f64::consts::TAU;

fn schedule() -> Vec<f64> {
    let mut periods: Vec<f64> = (0..=15).map(f64::from).collect();
    periods.extend([20.0, 30.0, 40.0, 50.0]);
    periods.iter().map(|p| p * TAU).collect()
}

fn model_series(a: f64, b: f64, c: f64) -> HBarSeries {
    let times = schedule();
    let means: Vec<f64> = times.iter().map(|t| a * (-b * t / TAU).exp() + c).collect();
    HBarSeries::from_means(&times, &means)
}

fn sse(series: &HBarSeries, fit: &FitResult) -> f64 {
    series
        .entries
        .iter()
        .map(|e| (e.mean - fit.model(e.periods)).powi(2))
        .sum()
}

#[test]
fn recovers_random_exact_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let a = rng.gen_range(0.05..1.0);
        let (b, c) = (rng.gen_range(0.05..2.0), rng.gen_range(0.0..a));
        let fit = fit_exponential(&model_series(a, b, c)).unwrap();
        assert!(
            (fit.a - a).abs() < 1e-6 && (fit.b - b).abs() < 1e-6 && (fit.c - c).abs() < 1e-6,
            "{a} {b} {c} -> {fit:?}"
        );
    }
}

#[test]
fn fit_is_a_local_optimum_on_noisy_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let times = schedule();
    let means: Vec<f64> = times
        .iter()
        .map(|t| 0.42 * (-0.15 * t / TAU).exp() + 0.07 + rng.gen_range(-0.005..0.005))
        .collect();
    let series = HBarSeries::from_means(&times, &means);
    let fit = fit_exponential(&series).unwrap();
    let best = fit.rms_residual;
    for _ in 0..20 {
        let b = fit.b * (1.0 + rng.gen_range(-0.01..0.01));
        let c = fit.c * (1.0 + rng.gen_range(-0.01..0.01));
        let moved = FitResult {
            a: means[0] - c,
            b,
            c,
            ..fit
        };
        let rms = (sse(&series, &moved) / means.len() as f64).sqrt();
        assert!(rms >= best, "({b},{c}) improved the fit");
    }
    assert!((fit.c - 0.07).abs() < 0.01);
    assert!((fit.a + fit.c - means[0]).abs() < 1e-12);
}

#[test]
fn residue_is_never_negative() {
    let times = schedule();
    let means: Vec<f64> = times.iter().map(|t| 0.5 * (-0.3 * t / TAU).exp() - 0.01).collect();
    let fit = fit_exponential(&HBarSeries::from_means(&times, &means)).unwrap();
    assert_eq!(fit.c, 0.0);
}

#[test]
fn saturation_follows_the_band() {
    let series = model_series(0.4, 0.1, 0.07);
    let fit = fit_exponential(&series).unwrap();
    // 0.4 e^{-0.1 k} <= 0.02 first for k >= 30
    assert_eq!(saturation_time(&series, &fit), Some(30.0 * TAU));
    assert_eq!(fit.t_sat, Some(30.0 * TAU));
}

#[test]
fn short_series_are_rejected() {
    let series = HBarSeries::from_means(&[0.0, TAU], &[0.5, 0.4]);
    assert!(matches!(fit_exponential(&series), Err(AnalysisError::TooShort { .. })));
}

#[test]
fn log_series_of_exponential_is_linear() {
    let series = model_series(0.5, 0.2, 0.0);
    let points = log_series(&series).unwrap();
    let x: Vec<f64> = points.iter().map(|p| p.time / TAU).collect();
    let y: Vec<f64> = points.iter().map(|p| p.ln_mean).collect();
    let line = linear_fit(&x, &y);
    assert!((line.slope + 0.2).abs() < 1e-10);
    assert!((line.intercept - 0.5f64.ln()).abs() < 1e-10);
    assert!((line.r_squared - 1.0).abs() < 1e-12);
}

#[test]
fn series_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hbar.csv");
    let series = HBarSeries {
        entries: vec![
            HBarEntry::new(0.0, vec![0.48941, 0.48942, 0.48941], 1.0),
            HBarEntry::new(TAU, vec![0.35, 0.351, 0.349], 0.9995),
        ],
    };
    write_series_csv(&path, &series, &[29, 30, 31]).unwrap();
    let back = read_series_csv(&path).unwrap();
    assert_eq!(back, series);
    let fit_text = std::fs::read_to_string(&path).unwrap();
    assert!(fit_text.starts_with("time,"));
}

proptest! {
    #[test]
    fn exact_models_fit_exactly(a in 0.05..1.0f64, b in 0.05..1.5f64, c in 0.0..0.2f64) {
        let fit = fit_exponential(&model_series(a, b, c)).unwrap();
        prop_assert!(fit.rms_residual < 1e-7);
        prop_assert!((fit.c - c).abs() < 1e-6);
    }
}
