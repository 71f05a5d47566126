//! Experiment harness for `guidelab`: configuration, seeded sweeps, tidy CSV
//! output and threshold verdicts.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod report;

use std::fs;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub use config::{Config, ConfigError};
pub use experiments::{run_experiment, Experiment, RunError};
pub use report::{Check, Report};

/// Writes every table, extra file, the verdict, the config echo and a
/// `run.meta` sidecar into `dir`. Only the sidecar carries a timestamp.
pub fn write_outputs(dir: &Path, experiment: Experiment, cfg: &Config, report: &Report) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    for (name, table) in &report.tables {
        fs::write(dir.join(name), table.render(&hash))?;
    }
    for (name, contents) in &report.files {
        fs::write(dir.join(name), contents)?;
    }
    fs::write(dir.join("verdict.csv"), report.verdict(&hash))?;
    fs::write(dir.join("config.echo"), cfg.echo())?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = format!(
        "experiment = {experiment}\nconfig_hash = {hash}\nversion = {}\nthreads = {}\nwritten_unix = {started}\n",
        env!("CARGO_PKG_VERSION"),
        rayon::current_num_threads(),
    );
    fs::write(dir.join("run.meta"), meta)
}
