//! `relax check`: a fast validation suite run against the configured
//! superposition.

use std::f64::consts::{PI, TAU};

use anyhow::Result;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use relax::analysis::fit_exponential;
use relax::density::{build_density, forward_crosscheck, hbar_at, relative_l1, smooth_density};
use relax::integrator::integrate;
use relax::{CellPartition, HBarSeries, InitialDensity, IntegratorConfig, Point, Superposition};

use crate::config::RunConfig;
use crate::output::Run;

#[derive(Debug, Serialize)]
struct Item {
    name: &'static str,
    passed: bool,
    value: f64,
    limit: String,
}

fn item(name: &'static str, value: f64, ok: bool, limit: impl Into<String>) -> Item {
    Item {
        name,
        passed: ok,
        value,
        limit: limit.into(),
    }
}

fn random_points(spec: &Superposition, n: usize, t: f64, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reach = support_radius(spec);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Point::new(rng.gen_range(-reach..reach), rng.gen_range(-reach..reach));
        if spec.rho_qt(p, t) > 1e-6 {
            out.push(p);
        }
    }
    out
}

/// Radius beyond which `|psi|^2` is negligible for the highest mode.
fn support_radius(spec: &Superposition) -> f64 {
    (2.0 * spec.modes_per_axis() as f64 + 1.0).sqrt() + 2.0
}

/// Samples `|psi(., 0)|^2` by rejection.
fn equilibrium_sample(spec: &Superposition, n: usize, seed: u64) -> Vec<Point> {
    let reach = support_radius(spec);
    let mut peak = 0.0f64;
    for i in 0..=100 {
        for j in 0..=100 {
            let p = Point::new(-reach + 0.02 * reach * i as f64, -reach + 0.02 * reach * j as f64);
            peak = peak.max(spec.rho_qt(p, 0.0));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Point::new(rng.gen_range(-reach..reach), rng.gen_range(-reach..reach));
        if rng.gen_range(0.0..1.5 * peak) < spec.rho_qt(p, 0.0) {
            out.push(p);
        }
    }
    out
}

fn velocity_gradient(spec: &Superposition) -> Result<Item> {
    let h = 1e-3;
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in random_points(spec, 50, 0.0, 2) {
        let t = rng.gen_range(0.0..TAU);
        if spec.rho_qt(p, t) <= 1e-6 {
            continue;
        }
        let psi = spec.psi(p, t);
        let fd = |dx: f64, dy: f64| -> Complex64 {
            let at = |s: f64| spec.psi(Point::new(p.q1 + s * dx, p.q2 + s * dy), t);
            (-at(2.0 * h) + at(h) * 8.0 - at(-h) * 8.0 + at(-2.0 * h)) / (12.0 * h)
        };
        let (f1, f2) = ((fd(1.0, 0.0) / psi).im, (fd(0.0, 1.0) / psi).im);
        let (v1, v2) = spec.velocity(p, t)?;
        worst = worst.max((v1 - f1).hypot(v2 - f2) / v1.hypot(v2).max(1e-3));
    }
    Ok(item(
        "velocity_vs_finite_difference",
        worst,
        worst <= 1e-6,
        "relative error <= 1e-6",
    ))
}

fn norm(spec: &Superposition) -> Item {
    let l = support_radius(spec) + 5.0;
    let n = (40.0 * l).ceil() as usize;
    let h = 2.0 * l / n as f64;
    let worst = [0.0, 1.0, PI]
        .iter()
        .map(|&t| {
            // Trapezoid rule; the integrand vanishes at the edges.
            let total: f64 = (0..=n)
                .into_par_iter()
                .map(|i| {
                    (0..=n)
                        .map(|j| spec.rho_qt(Point::new(-l + i as f64 * h, -l + j as f64 * h), t))
                        .sum::<f64>()
                })
                .sum();
            (total * h * h - 1.0).abs()
        })
        .fold(0.0f64, f64::max);
    item("norm_at_0_1_pi", worst, worst <= 1e-6, "|norm - 1| <= 1e-6")
}

fn periodicity(spec: &Superposition) -> Item {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reach = support_radius(spec);
    let worst = (0..1000)
        .map(|_| {
            let p = Point::new(rng.gen_range(-reach..reach), rng.gen_range(-reach..reach));
            (spec.psi(p, TAU) - spec.psi(p, 0.0)).norm()
        })
        .fold(0.0f64, f64::max);
    item("periodicity", worst, worst <= 1e-12, "|psi(2 pi) - psi(0)| <= 1e-12")
}

fn equilibrium_null(spec: &Superposition, cfg: &IntegratorConfig) -> Result<Item> {
    let (h, _) = hbar_at(spec, PI, &CellPartition::standard(6), cfg, InitialDensity::Equilibrium)?;
    Ok(item("equilibrium_null_at_pi", h, h.abs() <= 0.01, "|H| <= 0.01"))
}

/// Median forward-and-back displacement over 2 pi of `n` equilibrium points,
/// and the fraction within twice the position tolerance.
fn round_trip(spec: &Superposition, cfg: &IntegratorConfig, n: usize) -> (f64, f64) {
    let starts = equilibrium_sample(spec, n, 4);
    let mut d: Vec<f64> = starts
        .par_iter()
        .map(|&p| {
            let fwd = integrate(spec, p, 0.0, TAU, cfg);
            let back = fwd.endpoint().map(|&q| integrate(spec, q, TAU, 0.0, cfg));
            match back {
                Some(b) if b.succeeded() => b.endpoint.distance(&p),
                _ => f64::INFINITY,
            }
        })
        .collect();
    d.sort_by(f64::total_cmp);
    let within = d.iter().filter(|&&x| x <= 2.0 * cfg.position_tolerance).count();
    (d[n / 2], within as f64 / n as f64)
}

fn cross_check(spec: &Superposition, cfg: &IntegratorConfig) -> Result<Item> {
    let part = CellPartition::standard(20);
    let back = smooth_density(&build_density(spec, TAU, &part, cfg, InitialDensity::GroundState)?)?;
    let fwd = forward_crosscheck(spec, TAU, 100_000, &part, cfg, InitialDensity::GroundState)?;
    let l1 = relative_l1(&fwd.rho, &back.rho);
    Ok(item("forward_cross_check_at_2pi", l1, l1 <= 0.05, "L1 <= 5% of mass"))
}

fn fit_recovery() -> Result<Item> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let times: Vec<f64> = relax::density::default_schedule().iter().map(|p| p * TAU).collect();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = rng.gen_range(0.05..1.0);
        let (b, c) = (rng.gen_range(0.05..2.0), rng.gen_range(0.0..a));
        let means: Vec<f64> = times.iter().map(|t| a * (-b * t / TAU).exp() + c).collect();
        let fit = fit_exponential(&HBarSeries::from_means(&times, &means))?;
        worst = worst
            .max((fit.a - a).abs())
            .max((fit.b - b).abs())
            .max((fit.c - c).abs());
    }
    Ok(item("fit_recovery", worst, worst <= 1e-6, "parameter error <= 1e-6"))
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.spec()?;
    let run = Run::start(cfg, "check")?;
    let outcome = (|| -> Result<Vec<Item>> {
        let icfg = &cfg.integrator;
        let mut items = vec![
            velocity_gradient(&spec)?,
            norm(&spec),
            periodicity(&spec),
            equilibrium_null(&spec, icfg)?,
        ];
        let (median, fraction) = round_trip(&spec, icfg, 200);
        items.push(item(
            "round_trip_within_2x_tolerance",
            fraction,
            fraction >= 0.99,
            "fraction >= 0.99",
        ));
        let tight = icfg.with_local_tolerance(icfg.local_error_tolerance / 10.0);
        let (tight_median, _) = round_trip(&spec, &tight, 200);
        items.push(item(
            "round_trip_median_tightened_10x",
            tight_median,
            tight_median <= median,
            format!("<= median at default tolerance ({median:.3e})"),
        ));
        items.push(cross_check(&spec, icfg)?);
        items.push(fit_recovery()?);
        Ok(items)
    })();
    let items = match outcome {
        Ok(items) => items,
        Err(err) => return run.finish(&json!({}), Err(err)),
    };
    for it in &items {
        println!(
            "{:<34} {}  {:.3e}  ({})",
            it.name,
            if it.passed { "PASS" } else { "FAIL" },
            it.value,
            it.limit
        );
    }
    let failed = items.iter().filter(|i| !i.passed).count();
    let result = if failed == 0 {
        Ok(())
    } else {
        Err(anyhow::anyhow!("{failed} checks failed"))
    };
    let results = json!({ "items": items, "failed": failed });
    run.finish(&results, result)
}
