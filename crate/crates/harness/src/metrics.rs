//! Metrics files: one CSV per seed, an aggregate across seeds, and a timing
//! sidecar. Everything except the sidecar is a pure function of the config
//! and seed, so repeated runs produce identical bytes.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const STD_NOTE: &str = "# std columns: population standard deviation";

pub fn metrics_file(seed: u64) -> String {
    format!("metrics-seed{seed}.csv")
}

/// One evaluation snapshot of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub iteration: u64,
    pub mean_eval_return: f64,
    /// Spread of the evaluation episodes' returns.
    pub return_std: f64,
    pub mean_value_estimate: f64,
    /// Mean loss over the updates since the previous evaluation.
    pub training_loss: f64,
    /// Set once the run has hit a non-finite loss; the values are frozen.
    pub diverged: bool,
    /// Kept out of the CSV; written to the timing sidecar instead.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

/// Cross-seed statistics at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub iteration: u64,
    pub seeds: usize,
    pub mean_return: f64,
    pub return_std: f64,
    pub mean_value_estimate: f64,
    pub value_std: f64,
    pub mean_training_loss: f64,
    pub diverged_seeds: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by n).
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Trailing mean over the last `window` points (fewer at the start).
pub fn windowed(series: &[f64], window: usize) -> Vec<f64> {
    (0..series.len())
        .map(|i| mean(&series[(i + 1).saturating_sub(window.max(1))..=i]))
        .collect()
}

/// Combines per-seed series that share one evaluation grid.
pub fn aggregate(runs: &[Vec<MetricsRecord>]) -> Result<Vec<AggregateRecord>> {
    let first = runs
        .first()
        .ok_or_else(|| HarnessError::Schema("no metrics to aggregate".into()))?;
    for run in runs {
        if run.len() != first.len()
            || run
                .iter()
                .zip(first)
                .any(|(a, b)| a.iteration != b.iteration)
        {
            return Err(HarnessError::Schema(format!(
                "seed {} has a different evaluation grid than seed {}",
                run.first().map_or(0, |r| r.seed),
                first.first().map_or(0, |r| r.seed)
            )));
        }
    }
    Ok((0..first.len())
        .map(|i| {
            let col =
                |f: fn(&MetricsRecord) -> f64| runs.iter().map(|r| f(&r[i])).collect::<Vec<_>>();
            let returns = col(|r| r.mean_eval_return);
            let values = col(|r| r.mean_value_estimate);
            AggregateRecord {
                iteration: first[i].iteration,
                seeds: runs.len(),
                mean_return: mean(&returns),
                return_std: population_std(&returns),
                mean_value_estimate: mean(&values),
                value_std: population_std(&values),
                mean_training_loss: mean(&col(|r| r.training_loss)),
                diverged_seeds: runs.iter().filter(|r| r[i].diverged).count(),
            }
        })
        .collect())
}

pub(crate) fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    File::create(path).map_err(|e| HarnessError::io(path, e))
}

/// Writes rows as CSV, optionally preceded by a `#` comment line.
pub fn write_csv<R: Serialize>(path: &Path, note: Option<&str>, rows: &[R]) -> Result<()> {
    let mut file = create(path)?;
    if let Some(note) = note {
        writeln!(file, "{note}").map_err(|e| HarnessError::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file);
    r.deserialize()
        .collect::<std::result::Result<Vec<R>, _>>()
        .map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))
}

pub fn write_metrics(dir: &Path, records: &[MetricsRecord]) -> Result<PathBuf> {
    let seed = records
        .first()
        .ok_or_else(|| HarnessError::Schema("empty metrics series".into()))?
        .seed;
    let path = dir.join(metrics_file(seed));
    write_csv(&path, None, records)?;
    Ok(path)
}

/// Per-seed series found in `dir`, ordered by seed.
pub fn read_metrics_dir(dir: &Path) -> Result<Vec<Vec<MetricsRecord>>> {
    let mut files: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        let seed = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("metrics-seed"))
            .and_then(|n| n.strip_suffix(".csv"))
            .and_then(|n| n.parse().ok());
        if let Some(seed) = seed {
            files.push((seed, path));
        }
    }
    files.sort();
    let runs = files
        .iter()
        .map(|(_, p)| read_csv::<MetricsRecord>(p))
        .collect::<Result<Vec<_>>>()?;
    if runs.iter().any(Vec::is_empty) {
        return Err(HarnessError::Schema(format!(
            "{}: empty metrics file",
            dir.display()
        )));
    }
    Ok(runs)
}

#[derive(Serialize)]
struct TimingRow {
    seed: u64,
    iteration: u64,
    wall_clock_seconds: f64,
}

pub fn write_timing(dir: &Path, runs: &[Vec<MetricsRecord>]) -> Result<()> {
    let rows: Vec<TimingRow> = runs
        .iter()
        .flatten()
        .map(|r| TimingRow {
            seed: r.seed,
            iteration: r.iteration,
            wall_clock_seconds: r.wall_clock_seconds,
        })
        .collect();
    write_csv(&dir.join(TIMING_FILE), None, &rows)
}
