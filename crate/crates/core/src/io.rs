//! Text file formats: phase documents, density-field matrices, smoothed
//! fields, PGM heatmaps, and CSV tables for series, log series and traces.
//!
//! Matrix files start with a single JSON header line followed by one or more
//! blocks. Each block opens with `# <name>` and holds `n` lines of `n`
//! whitespace-separated values; row `i` indexes `q1`, column `j` indexes
//! `q2`. Values are written in shortest round-trip form, so reading a file
//! back reproduces the data bit for bit.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analysis::{HBarEntry, HBarSeries, LogPoint};
use crate::confinement::{SquareFate, TrajectoryTrace};
use crate::density::{CellPartition, DensityField, SmoothedField};
use crate::wavefunction::PhaseDocument;

pub const DENSITY_FORMAT: &str = "relax-density-field";
pub const SMOOTHED_FORMAT: &str = "relax-smoothed-field";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn write_phase_file(path: &Path, doc: &PhaseDocument) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_phase_file(path: &Path) -> Result<PhaseDocument, IoError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityHeader {
    pub format: String,
    pub time: f64,
    pub partition: CellPartition<f64>,
    pub accuracy_fraction: f64,
    pub points_per_axis: usize,
    pub blocks: Vec<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub context: Value,
}

fn write_block<W: Write>(w: &mut W, name: &str, n: usize, value: impl Fn(usize) -> String) -> io::Result<()> {
    writeln!(w, "# {name}")?;
    let mut line = String::new();
    for i in 0..n {
        line.clear();
        for j in 0..n {
            if j > 0 {
                line.push(' ');
            }
            line.push_str(&value(i * n + j));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Writes a density field; `context` (typically the effective run config)
/// is embedded in the header.
pub fn write_density_field(path: &Path, field: &DensityField<f64>, context: &Value) -> Result<(), IoError> {
    let n = field.partition.points_per_axis();
    let header = DensityHeader {
        format: DENSITY_FORMAT.into(),
        time: field.time,
        partition: field.partition,
        accuracy_fraction: field.accuracy_fraction,
        points_per_axis: n,
        blocks: vec!["rho".into(), "rho_qt".into(), "valid".into()],
        context: context.clone(),
    };
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        write_block(&mut w, "rho", n, |k| field.rho[k].to_string())?;
        write_block(&mut w, "rho_qt", n, |k| field.rho_qt[k].to_string())?;
        write_block(&mut w, "valid", n, |k| if field.valid[k] { "1" } else { "0" }.into())?;
        w.flush()?;
    }
    // Readers never observe a half-written checkpoint.
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_blocks(
    path: &Path,
    names: &[&str],
    n: usize,
    lines: &mut impl Iterator<Item = io::Result<String>>,
) -> Result<Vec<Vec<f64>>, IoError> {
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let tag = lines
            .next()
            .ok_or_else(|| format_err(path, format!("missing block {name}")))??;
        if tag.trim() != format!("# {name}") {
            return Err(format_err(path, format!("expected block '# {name}', found '{tag}'")));
        }
        let mut values = Vec::with_capacity(n * n);
        for row in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| format_err(path, format!("block {name} ends at row {row}")))??;
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|e| format_err(path, format!("bad value '{tok}': {e}")))?,
                );
            }
            if values.len() - before != n {
                return Err(format_err(path, format!("block {name} row {row} has wrong length")));
            }
        }
        out.push(values);
    }
    Ok(out)
}

pub fn read_density_field(path: &Path) -> Result<(DensityField<f64>, DensityHeader), IoError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| format_err(path, "empty file"))??;
    let header: DensityHeader = serde_json::from_str(&first)?;
    if header.format != DENSITY_FORMAT {
        return Err(format_err(path, format!("unexpected format {}", header.format)));
    }
    let n = header.partition.points_per_axis();
    if n != header.points_per_axis {
        return Err(format_err(path, "points_per_axis disagrees with partition"));
    }
    let mut blocks = read_blocks(path, &["rho", "rho_qt", "valid"], n, &mut lines)?;
    let valid = blocks.pop().unwrap().into_iter().map(|v| v != 0.0).collect();
    let rho_qt = blocks.pop().unwrap();
    let rho = blocks.pop().unwrap();
    let field = DensityField {
        time: header.time,
        partition: header.partition,
        rho,
        rho_qt,
        valid,
        accuracy_fraction: header.accuracy_fraction,
    };
    Ok((field, header))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedHeader {
    pub format: String,
    pub time: f64,
    pub centres_per_axis: usize,
    pub origin: f64,
    pub spacing: f64,
    pub cell_side: f64,
    pub blocks: Vec<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub context: Value,
}

pub fn write_smoothed_field(path: &Path, field: &SmoothedField<f64>, context: &Value) -> Result<(), IoError> {
    let header = SmoothedHeader {
        format: SMOOTHED_FORMAT.into(),
        time: field.time,
        centres_per_axis: field.centres_per_axis,
        origin: field.origin,
        spacing: field.spacing,
        cell_side: field.cell_side,
        blocks: vec!["rho".into(), "rho_qt".into()],
        context: context.clone(),
    };
    let n = field.centres_per_axis;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    write_block(&mut w, "rho", n, |k| field.rho[k].to_string())?;
    write_block(&mut w, "rho_qt", n, |k| field.rho_qt[k].to_string())?;
    w.flush()?;
    Ok(())
}

pub fn read_smoothed_field(path: &Path) -> Result<SmoothedField<f64>, IoError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| format_err(path, "empty file"))??;
    let header: SmoothedHeader = serde_json::from_str(&first)?;
    if header.format != SMOOTHED_FORMAT {
        return Err(format_err(path, format!("unexpected format {}", header.format)));
    }
    let mut blocks = read_blocks(path, &["rho", "rho_qt"], header.centres_per_axis, &mut lines)?;
    let rho_qt = blocks.pop().unwrap();
    let rho = blocks.pop().unwrap();
    Ok(SmoothedField {
        time: header.time,
        centres_per_axis: header.centres_per_axis,
        origin: header.origin,
        spacing: header.spacing,
        cell_side: header.cell_side,
        rho,
        rho_qt,
    })
}

/// Writes an `n x n` lattice (flat index `i1 * n + i2`) as an 8-bit binary
/// PGM. Image rows run from high to low `q2`, columns from low to high `q1`;
/// grey level `round(255 * v / scale)` clipped to `[0, 255]`.
pub fn write_pgm(path: &Path, n: usize, values: &[f64], scale: f64) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n# scale {scale}\n{n} {n}\n255\n")?;
    let mut row = vec![0u8; n];
    for r in 0..n {
        let i2 = n - 1 - r;
        for (i1, px) in row.iter_mut().enumerate() {
            let v = values[i1 * n + i2];
            let level = if scale > 0.0 { (255.0 * v / scale).round() } else { 0.0 };
            *px = level.clamp(0.0, 255.0) as u8;
        }
        w.write_all(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a binary PGM written by [`write_pgm`]: `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), IoError> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format_err(path, "not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| format_err(path, e.to_string()));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes[pos + 1..].to_vec();
    if data.len() != w * h {
        return Err(format_err(path, "pixel data has the wrong length"));
    }
    Ok((w, h, data))
}

/// Column names of an H-series CSV for the given grids.
pub fn series_columns(grids: &[usize]) -> Vec<String> {
    let mut cols = vec!["time".to_string(), "periods".to_string()];
    cols.extend(grids.iter().map(|g| format!("hbar_grid{g}")));
    cols.extend(
        ["hbar_mean", "hbar_min", "hbar_max", "accuracy_min"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols
}

pub fn series_csv(series: &HBarSeries<f64>, grids: &[usize]) -> String {
    let mut out = series_columns(grids).join(",");
    out.push('\n');
    for e in &series.entries {
        let _ = write!(out, "{},{}", e.time, e.periods);
        for v in &e.values {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{},{},{}", e.mean, e.min, e.max, e.accuracy_min);
    }
    out
}

pub fn write_series_csv(path: &Path, series: &HBarSeries<f64>, grids: &[usize]) -> Result<(), IoError> {
    fs::write(path, series_csv(series, grids))?;
    Ok(())
}

/// Reads an H-series CSV; per-grid values come from the `hbar_grid*`
/// columns, or from `hbar_mean` when none are present.
pub fn read_series_csv(path: &Path) -> Result<HBarSeries<f64>, IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let time_col = col("time").ok_or_else(|| format_err(path, "missing column 'time'"))?;
    let grid_cols: Vec<usize> = (0..header.len())
        .filter(|&i| header[i].starts_with("hbar_grid"))
        .collect();
    let mean_col = col("hbar_mean");
    let acc_col = col("accuracy_min");
    if grid_cols.is_empty() && mean_col.is_none() {
        return Err(format_err(path, "no H columns found"));
    }
    let mut series = HBarSeries::default();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let num = |i: usize| -> Result<f64, IoError> {
            record[i]
                .parse::<f64>()
                .map_err(|e| format_err(path, format!("row {}: {e}", row + 2)))
        };
        let values = if grid_cols.is_empty() {
            vec![num(mean_col.unwrap())?]
        } else {
            grid_cols.iter().map(|&i| num(i)).collect::<Result<_, _>>()?
        };
        let acc = match acc_col {
            Some(i) => num(i)?,
            None => 1.0,
        };
        series.entries.push(HBarEntry::new(num(time_col)?, values, acc));
    }
    Ok(series)
}

pub fn log_series_csv(points: &[LogPoint<f64>]) -> String {
    let mut out = String::from("time,periods,ln_mean,ln_min,ln_max\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.time,
            p.time / std::f64::consts::TAU,
            p.ln_mean,
            p.ln_min,
            p.ln_max
        );
    }
    out
}

/// `id,time,q1,q2,status` rows for every trace sample.
pub fn traces_csv(traces: &[TrajectoryTrace<f64>]) -> String {
    let mut out = String::from("id,time,q1,q2,status\n");
    for (id, tr) in traces.iter().enumerate() {
        for (k, (t, p)) in tr.samples.iter().enumerate() {
            // Status applies to the trajectory; the last sample carries it.
            let status = if k + 1 == tr.samples.len() {
                tr.status.as_str()
            } else {
                "ok"
            };
            let _ = writeln!(out, "{id},{t},{},{},{status}", p.q1, p.q2);
        }
    }
    out
}

/// `id,time,q1,q2,status` rows with initial (`time = 0`) and final points of
/// every square; `id` is `square * 1000 + point`.
pub fn squares_csv(fates: &[SquareFate<f64>]) -> String {
    let mut out = String::from("id,time,q1,q2,status\n");
    for (s, fate) in fates.iter().enumerate() {
        for (k, p) in fate.initial.iter().enumerate() {
            let _ = writeln!(out, "{},0,{},{},initial", s * 1000 + k, p.q1, p.q2);
        }
        for (k, (p, &ok)) in fate.finals.iter().zip(&fate.valid).enumerate() {
            let status = if ok { "final" } else { "failed" };
            let _ = writeln!(out, "{},{},{},{},{status}", s * 1000 + k, fate.t_end, p.q1, p.q2);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::HBarSeries;

    #[test]
    fn density_field_round_trips_exactly() {
        let part = CellPartition::<f64>::standard(2);
        let n = part.total_points();
        let field = DensityField {
            time: 1.0 / 3.0,
            partition: part,
            rho: (0..n).map(|i| (i as f64).sin().abs() / 7.0).collect(),
            rho_qt: (0..n).map(|i| 1e-300 * i as f64).collect(),
            valid: (0..n).map(|i| i % 17 != 0).collect(),
            accuracy_fraction: 0.96,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        write_density_field(&path, &field, &serde_json::json!({"seed": 3})).unwrap();
        let (back, header) = read_density_field(&path).unwrap();
        assert_eq!(back, field);
        assert_eq!(header.context["seed"], 3);
        assert!(!dir.path().join("f.partial").exists());
    }

    #[test]
    fn truncated_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        let header = r#"{"format":"relax-density-field","time":0.0,"partition":{"box_side":10.0,"cells_per_axis":1,"points_per_cell_axis":2},"accuracy_fraction":1.0,"points_per_axis":2,"blocks":["rho","rho_qt","valid"]}"#;
        fs::write(&path, format!("{header}\n# rho\n1 2\n")).unwrap();
        assert!(read_density_field(&path).is_err());
    }

    #[test]
    fn series_csv_round_trip() {
        let mut s = HBarSeries::default();
        s.entries.push(HBarEntry::new(0.0, vec![0.5, 0.49, 0.48], 1.0));
        s.entries
            .push(HBarEntry::new(std::f64::consts::TAU, vec![0.4, 0.41, 0.39], 0.99));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_series_csv(&path, &s, &[29, 30, 31]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "time,periods,hbar_grid29,hbar_grid30,hbar_grid31,hbar_mean,hbar_min,hbar_max,accuracy_min\n"
        ));
        assert_eq!(read_series_csv(&path).unwrap(), s);
    }

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        // values[i1 * 2 + i2]
        write_pgm(&path, 2, &[0.0, 1.0, 0.5, 2.0], 2.0).unwrap();
        let (w, h, px) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        // Top row is i2 = 1: (i1=0 -> 1.0, i1=1 -> 2.0).
        assert_eq!(px, vec![128, 255, 0, 64]);
    }
}
