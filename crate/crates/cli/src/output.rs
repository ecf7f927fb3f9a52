//! Output-directory plumbing: run metadata, atomic text writes, threads.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

pub const VERSION: &str = env!("RELAX_VERSION");

/// Environment variable holding the worker thread count.
pub const THREADS_VAR: &str = "RELAX_THREADS";

/// Sizes the global worker pool from `RELAX_THREADS` (default: all cores).
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_VAR}={raw} is not a thread count"))?;
    if n == 0 {
        bail!("{THREADS_VAR} must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")?;
    Ok(())
}

/// Writes `contents` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Collects the files a command writes and its metadata record.
pub struct Run<'a> {
    pub cfg: &'a RunConfig,
    command: &'static str,
    started: Instant,
    started_unix: u64,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    started_unix: u64,
    wall_clock_seconds: f64,
    threads: usize,
    config: &'a RunConfig,
    outputs: &'a [String],
    results: &'a Value,
}

impl<'a> Run<'a> {
    pub fn start(cfg: &'a RunConfig, command: &'static str) -> Result<Self> {
        fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(Self {
            cfg,
            command,
            started: Instant::now(),
            started_unix,
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    /// Records `name` as an output of this run and returns its path.
    pub fn output(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        self.path(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.output(name);
        write_atomic(&path, text.as_bytes())
    }

    /// The effective config as embedded in checkpoint and field headers.
    pub fn context(&self) -> Value {
        serde_json::json!({ "version": VERSION, "config": self.cfg })
    }

    /// Writes `<command>_metadata.json` with the outcome, then passes `result` on.
    pub fn finish(self, results: &Value, result: Result<()>) -> Result<()> {
        let error = result.as_ref().err().map(|e| format!("{e:#}"));
        let meta = Metadata {
            command: self.command,
            version: VERSION,
            status: if error.is_some() { "error" } else { "ok" },
            error,
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
            config: self.cfg,
            outputs: &self.outputs,
            results,
        };
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        write_atomic(&self.path(&format!("{}_metadata.json", self.command)), text.as_bytes())?;
        result
    }
}
