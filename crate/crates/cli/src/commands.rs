//! The `phases`, `hbar`, `density`, `confine` and `fit` commands.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use log::{info, warn};
use serde_json::{json, Value};

use relax::analysis::{fit_exponential, log_series, AnalysisError, DECAY_RATE_RANGE, SATURATION_BAND_FLOOR};
use relax::confinement::{
    coverage_with, dispersion_ratio, mean_trace_coverage, square_fate, traces, CellMassMap, ConfinementGrade,
    CLUSTERED_DISPERSION_RATIO, NEGLIGIBLE_CONFINEMENT_COVERAGE, SIGNIFICANT_CELL_MASS, STRONG_CONFINEMENT_COVERAGE,
};
use relax::density::{build_density, forward_crosscheck, hbar_series_with, relative_l1, smooth_density, SeriesHooks};
use relax::io::{
    log_series_csv, read_density_field, read_series_csv, series_csv, squares_csv, traces_csv, write_density_field,
    write_pgm, write_phase_file, write_smoothed_field,
};
use relax::{CellPartition, DensityField, HBarEntry, HBarSeries, Point, SmoothedField, Superposition};

use crate::config::RunConfig;
use crate::output::{write_atomic, Run};

pub fn phases(cfg: &RunConfig) -> Result<()> {
    let mut run = Run::start(cfg, "phases")?;
    let path = run.output("phases.json");
    let result = write_phase_file(&path, &cfg.phases).map_err(anyhow::Error::from);
    if result.is_ok() {
        info!("wrote {}", path.display());
    }
    run.finish(&json!({ "modes_per_axis": cfg.phases.modes_per_axis }), result)
}

const CHECKPOINT_DIR: &str = "checkpoints";

fn checkpoint_name(periods: f64, points_per_cell: usize) -> String {
    format!("{CHECKPOINT_DIR}/field_p{periods:.6}_g{points_per_cell}.txt")
}

/// The part of the config a density field depends on; checkpoints written
/// under a different identity are recomputed rather than reused.
fn field_identity(cfg: &RunConfig) -> Value {
    json!({ "phases": cfg.phases, "integrator": cfg.integrator, "initial": cfg.initial })
}

/// Loads a usable checkpoint for `(periods, partition)` when resuming.
fn load_checkpoint(cfg: &RunConfig, path: &Path, time: f64, partition: &CellPartition) -> Option<DensityField> {
    if !cfg.resume || !path.exists() {
        return None;
    }
    match read_density_field(path) {
        Ok((field, header)) => {
            let same = header.context.get("identity") == Some(&field_identity(cfg))
                && field.time == time
                && field.partition == *partition
                && field.usable();
            if same {
                info!("resumed {}", path.display());
                Some(field)
            } else {
                warn!("{} was computed with other settings; recomputing", path.display());
                None
            }
        }
        Err(err) => {
            warn!("unreadable checkpoint {}: {err}; recomputing", path.display());
            None
        }
    }
}

fn checkpoint_context(run: &Run) -> Value {
    let mut ctx = run.context();
    ctx["identity"] = field_identity(run.cfg);
    ctx
}

struct Checkpoints<'r, 'c> {
    run: &'r mut Run<'c>,
    context: Value,
    grids: Vec<usize>,
    completed: HBarSeries,
    write_error: Option<anyhow::Error>,
}

impl SeriesHooks<f64> for Checkpoints<'_, '_> {
    fn cached_field(&mut self, time: f64, partition: &CellPartition) -> Option<DensityField> {
        let name = checkpoint_name(time / TAU, partition.points_per_cell_axis);
        let path = self.run.path(&name);
        let field = load_checkpoint(self.run.cfg, &path, time, partition)?;
        self.run.output(&name);
        Some(field)
    }

    fn field_completed(&mut self, field: &DensityField) {
        let name = checkpoint_name(field.time / TAU, field.partition.points_per_cell_axis);
        let path = self.run.output(&name);
        if let Err(err) = write_density_field(&path, field, &self.context) {
            self.write_error
                .get_or_insert(anyhow!(err).context(format!("writing {}", path.display())));
        }
        info!(
            "t = {:.3} periods, grid {}: accuracy {:.5}",
            field.time / TAU,
            field.partition.points_per_cell_axis,
            field.accuracy_fraction
        );
    }

    fn entry_completed(&mut self, entry: &HBarEntry) {
        info!(
            "t = {:.3} periods: H = {:.5} [{:.5}, {:.5}]",
            entry.periods, entry.mean, entry.min, entry.max
        );
        self.completed.entries.push(entry.clone());
        // Progress copy of the series; replaced by the final write.
        let text = series_csv(&self.completed, &self.grids);
        if let Err(err) = write_atomic(&self.run.path("hbar.csv"), text.as_bytes()) {
            self.write_error.get_or_insert(err);
        }
    }
}

pub fn hbar(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.spec()?;
    let mut run = Run::start(cfg, "hbar")?;
    let mut results = json!({});
    let outcome = hbar_inner(&spec, &mut run, &mut results);
    run.finish(&results, outcome)
}

fn hbar_inner(spec: &Superposition, run: &mut Run, results: &mut Value) -> Result<()> {
    let cfg = run.cfg;
    fs::create_dir_all(run.path(CHECKPOINT_DIR))?;
    let times: Vec<f64> = cfg.schedule.iter().map(|p| p * TAU).collect();
    let grids: Vec<CellPartition> = cfg.grids.iter().map(|&g| CellPartition::standard(g)).collect();
    let context = checkpoint_context(run);
    let mut hooks = Checkpoints {
        run,
        context,
        grids: cfg.grids.clone(),
        completed: HBarSeries::default(),
        write_error: None,
    };
    let outcome = hbar_series_with(spec, &times, &grids, &cfg.integrator, cfg.initial, &mut hooks);
    let write_error = hooks.write_error.take();
    let (series, failure) = match outcome {
        Ok(s) => (s, None),
        Err(e) => (e.completed.clone(), Some(anyhow!(e.source.to_string()))),
    };
    run.write_text("hbar.csv", &series_csv(&series, &cfg.grids))?;
    results["entries"] = json!(series.entries.len());
    results["accuracy_min"] = json!(series.entries.iter().map(|e| e.accuracy_min).fold(1.0, f64::min));
    if let Some(err) = write_error {
        return Err(err);
    }
    if let Some(err) = failure {
        return Err(err.context("H-series aborted; completed times are in hbar.csv"));
    }

    write_log_series(run, &series, results)?;
    if series.entries.len() >= 3 {
        match fit_exponential(&series) {
            Ok(fit) => {
                info!("fit: a = {:.5}, b = {:.5} per period, c = {:.5}", fit.a, fit.b, fit.c);
                results["fit"] = fit_json(&fit);
                run.write_text("hbar.gp", &gnuplot_script(&cfg.grids, Some((fit.a, fit.b, fit.c))))?;
            }
            Err(err) => {
                warn!("no fit: {err}");
                results["fit_error"] = json!(err.to_string());
                run.write_text("hbar.gp", &gnuplot_script(&cfg.grids, None))?;
            }
        }
    }

    let mut snapshots = Vec::new();
    for &p in &cfg.snapshot_periods {
        let name = checkpoint_name(p, cfg.grids[0]);
        let (field, _) = read_density_field(&run.path(&name)).with_context(|| format!("reading {name}"))?;
        snapshots.push(write_snapshot(run, &smooth_density(&field)?, p, "")?);
    }
    results["snapshots"] = Value::Array(snapshots);
    Ok(())
}

fn fit_json(fit: &relax::FitResult) -> Value {
    json!({
        "model": "a * exp(-b * periods) + c, a + c = H(0)",
        "a": fit.a,
        "b": fit.b,
        "c": fit.c,
        "rms_residual": fit.rms_residual,
        "t_sat": fit.t_sat,
        "t_sat_periods": fit.t_sat.map(|t| t / TAU),
        "fitted_to": "three-grid mean, unweighted",
        "decay_rate_search_range": DECAY_RATE_RANGE,
        "saturation_band": format!("max(2 * spread, {SATURATION_BAND_FLOOR})"),
    })
}

fn write_log_series(run: &mut Run, series: &HBarSeries, results: &mut Value) -> Result<()> {
    let points = match log_series(series) {
        Ok(points) => points,
        Err(AnalysisError::NonPositiveValue { index, prefix }) => {
            warn!("H is not positive at entry {index}; log series truncated");
            results["log_series_truncated_at"] = json!(index);
            prefix
        }
        Err(err) => return Err(err.into()),
    };
    run.write_text("log_hbar.csv", &log_series_csv(&points))
}

fn gnuplot_script(grids: &[usize], fit: Option<(f64, f64, f64)>) -> String {
    let mean = 3 + grids.len();
    let mut s = String::new();
    let _ = writeln!(s, "# gnuplot -persist hbar.gp");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set xlabel 't / 2 pi'");
    let _ = writeln!(s, "set ylabel 'H'");
    let mut plot = format!(
        "plot 'hbar.csv' using 2:{mean}:{}:{} with yerrorbars title 'H (mean, min-max)'",
        mean + 1,
        mean + 2
    );
    if let Some((a, b, c)) = fit {
        let _ = writeln!(s, "f(x) = {a:e} * exp(-{b:e} * x) + {c:e}");
        plot.push_str(", f(x) with lines title 'fit'");
    }
    let _ = writeln!(s, "{plot}");
    let _ = writeln!(s, "pause mouse close");
    let _ = writeln!(s, "set ylabel 'ln H'");
    let _ = writeln!(s, "plot 'log_hbar.csv' using 2:3:4:5 with yerrorbars title 'ln H'");
    s
}

/// Writes a smoothed field and its two heatmaps (common grey scale).
fn write_snapshot(run: &mut Run, field: &SmoothedField, periods: f64, tag: &str) -> Result<Value> {
    let stem = format!("smoothed{tag}_p{periods:.6}");
    let context = run.context();
    let path = run.output(&format!("{stem}.txt"));
    write_smoothed_field(&path, field, &context)?;
    let scale = field.rho.iter().chain(&field.rho_qt).fold(0.0f64, |a, &b| a.max(b));
    let n = field.centres_per_axis;
    write_pgm(&run.output(&format!("{stem}_rho.pgm")), n, &field.rho, scale)?;
    write_pgm(&run.output(&format!("{stem}_rho_qt.pgm")), n, &field.rho_qt, scale)?;
    Ok(json!({
        "periods": periods,
        "field": format!("{stem}.txt"),
        "rho_pgm": format!("{stem}_rho.pgm"),
        "rho_qt_pgm": format!("{stem}_rho_qt.pgm"),
        "pgm_scale": scale,
        "pgm_encoding": "grey = round(255 * value / pgm_scale); rows from high to low q2, columns from low to high q1",
        "relative_l1_to_equilibrium": field.relative_l1_to_equilibrium(),
    }))
}

pub fn density(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.spec()?;
    let mut run = Run::start(cfg, "density")?;
    let mut results = json!({ "snapshots": [] });
    let outcome = density_inner(&spec, &mut run, &mut results);
    run.finish(&results, outcome)
}

fn density_inner(spec: &Superposition, run: &mut Run, results: &mut Value) -> Result<()> {
    let cfg = run.cfg;
    fs::create_dir_all(run.path(CHECKPOINT_DIR))?;
    let partition = CellPartition::standard(cfg.grids[0]);
    let context = checkpoint_context(run);
    for &p in &cfg.density_periods {
        let t = p * TAU;
        let name = checkpoint_name(p, partition.points_per_cell_axis);
        let path = run.output(&name);
        let field = match load_checkpoint(cfg, &path, t, &partition) {
            Some(f) => f,
            None => {
                let built = build_density(spec, t, &partition, &cfg.integrator, cfg.initial);
                let field = match built {
                    Ok(f) => f,
                    Err(relax::density::DensityError::AbortedRun { field, accuracy, .. }) => {
                        write_density_field(&path, &field, &context)?;
                        return Err(anyhow!("density at {p} periods aborted: accuracy {accuracy:.4}"));
                    }
                    Err(e) => return Err(e.into()),
                };
                write_density_field(&path, &field, &context)?;
                field
            }
        };
        info!("t = {p} periods: accuracy {:.5}", field.accuracy_fraction);
        let smoothed = smooth_density(&field)?;
        let mut snap = write_snapshot(run, &smoothed, p, "")?;
        snap["accuracy_fraction"] = json!(field.accuracy_fraction);
        snap["checkpoint"] = json!(name);
        if cfg.crosscheck_particles > 0 {
            let fwd = forward_crosscheck(
                spec,
                t,
                cfg.crosscheck_particles,
                &partition,
                &cfg.integrator,
                cfg.initial,
            )?;
            let l1 = relative_l1(&fwd.rho, &smoothed.rho);
            info!("t = {p} periods: forward cross-check L1 {:.4}", l1);
            snap["crosscheck"] = write_snapshot(run, &fwd, p, "_forward")?;
            snap["crosscheck"]["relative_l1_to_backtracked"] = json!(l1);
            snap["crosscheck"]["particles"] = json!(cfg.crosscheck_particles);
        }
        results["snapshots"].as_array_mut().expect("array").push(snap);
    }
    Ok(())
}

pub fn confine(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.spec()?;
    let mut run = Run::start(cfg, "confine")?;
    let mut results = json!({});
    let outcome = confine_inner(&spec, &mut run, &mut results);
    run.finish(&results, outcome)
}

fn confine_inner(spec: &Superposition, run: &mut Run, results: &mut Value) -> Result<()> {
    let cfg = run.cfg;
    let t_end = cfg.periods * TAU;
    let starts: Vec<Point> = cfg.starts.iter().map(|&[a, b]| Point::new(a, b)).collect();
    info!("tracing {} trajectories over {} periods", starts.len(), cfg.periods);
    let trs = traces(spec, &starts, t_end, cfg.stride_periods * TAU, &cfg.integrator);
    run.write_text("traces.csv", &traces_csv(&trs))?;

    let fates: Vec<_> = starts
        .iter()
        .map(|&c| square_fate(spec, c, cfg.square_side, cfg.square_lattice, t_end, &cfg.integrator))
        .collect();
    run.write_text("squares.csv", &squares_csv(&fates))?;

    let map = CellMassMap::new(
        spec,
        &CellPartition::standard(cfg.coverage_points_per_cell),
        cfg.mass_time_samples,
    );
    let union = coverage_with(&trs, &map);
    let mean = mean_trace_coverage(&trs, &map);
    let grade = ConfinementGrade::from_coverage(mean);
    info!("coverage {union:.4} (per-trace mean {mean:.4}): {grade:?}");
    let per_trace: Vec<Value> = trs
        .iter()
        .map(|t| {
            json!({
                "start": [t.start.q1, t.start.q2],
                "status": t.status.as_str(),
                "samples": t.samples.len(),
                "steps": t.steps_used,
                "coverage": coverage_with(std::slice::from_ref(t), &map),
            })
        })
        .collect();
    let squares: Vec<Value> = fates
        .iter()
        .map(|f| {
            let ratio = dispersion_ratio(f, map.support_area());
            json!({
                "centre": [f.centre.q1, f.centre.q2],
                "failed_points": f.valid.iter().filter(|v| !**v).count(),
                "dispersion_ratio": ratio,
                "clustered": ratio < CLUSTERED_DISPERSION_RATIO,
            })
        })
        .collect();
    let failures = trs
        .iter()
        .filter(|t| !t.status.eq(&relax::TrajectoryStatus::Succeeded))
        .count();
    *results = json!({
        "coverage": union,
        "mean_trace_coverage": mean,
        "grade": grade,
        "graded_on": "mean_trace_coverage",
        "thresholds": {
            "negligible_at_least": NEGLIGIBLE_CONFINEMENT_COVERAGE,
            "strong_below": STRONG_CONFINEMENT_COVERAGE,
            "significant_cell_mass": SIGNIFICANT_CELL_MASS,
            "clustered_dispersion_ratio_below": CLUSTERED_DISPERSION_RATIO,
        },
        "support_area": map.support_area(),
        "failed_traces": failures,
        "traces": per_trace,
        "squares": squares,
    });
    Ok(())
}

pub fn fit(cfg: &RunConfig, csv: &Path) -> Result<()> {
    let run = Run::start(cfg, "fit")?;
    let mut results = json!({ "input": csv });
    let outcome = (|| -> Result<()> {
        let series = read_series_csv(csv).with_context(|| format!("reading {}", csv.display()))?;
        let fit = fit_exponential(&series)?;
        println!(
            "a = {:.6}  b = {:.6} per period  c = {:.6}  rms = {:.3e}  t_sat = {}",
            fit.a,
            fit.b,
            fit.c,
            fit.rms_residual,
            fit.t_sat
                .map_or("none".to_string(), |t| format!("{:.2} periods", t / TAU))
        );
        results["fit"] = fit_json(&fit);
        Ok(())
    })();
    run.finish(&results, outcome)
}
