//! CSV tables and JSON run summaries.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::ensemble::EnsembleStats;
use super::spec::ExperimentSpec;
use crate::error::{Error, Result};

/// CSV text: `step,time`, then `{col}_mean,{col}_var,{col}_stderr` per
/// column. Floats use the shortest digits that parse back to the same value,
/// switching to exponent notation for very small or large magnitudes.
pub fn format_csv(stats: &EnsembleStats) -> String {
    let mut out = String::from("step,time");
    for c in &stats.columns {
        write!(out, ",{c}_mean,{c}_var,{c}_stderr").unwrap();
    }
    out.push('\n');
    if stats.columns.is_empty() {
        return out;
    }
    for (r, &step) in stats.steps.iter().enumerate() {
        write!(out, "{step},{:?}", step as f64 * stats.eta).unwrap();
        for c in 0..stats.columns.len() {
            write!(out, ",{:?},{:?},{:?}", stats.mean[c][r], stats.var[c][r], stats.stderr[c][r]).unwrap();
        }
        out.push('\n');
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn emit_csv(stats: &EnsembleStats, path: &Path) -> Result<()> {
    write(path, &format_csv(stats))
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    seed: u64,
    paths: usize,
    diverged: usize,
    max_increment_inf: f64,
    csv: String,
    spec: &'a ExperimentSpec,
}

/// Sidecar JSON next to a CSV: counts plus the fully resolved spec.
pub fn write_summary(stats: &EnsembleStats, spec: &ExperimentSpec, csv: &Path, path: &Path) -> Result<()> {
    let s = Summary {
        name: &stats.name,
        seed: stats.seed,
        paths: stats.paths,
        diverged: stats.diverged,
        max_increment_inf: stats.max_increment_inf,
        csv: csv.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        spec,
    };
    write(path, &serde_json::to_string_pretty(&s).expect("summaries serialize"))
}
