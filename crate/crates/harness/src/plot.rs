//! Plot-ready series: cross-seed mean and spread per evaluation point.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::experiment::{ManifestLabel, MANIFEST_FILE};
use crate::metrics::{aggregate, read_metrics_dir, windowed, write_csv};

pub const PLOT_DIR: &str = "plots";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub iteration: u64,
    pub return_mean: f64,
    pub return_std: f64,
    pub return_windowed: f64,
    pub value_mean: f64,
    pub value_std: f64,
    /// `value_mean` clamped to `[-clip, clip]` for display.
    pub value_display: f64,
    pub diverged_seeds: usize,
}

/// Builds the plot series for one run directory.
pub fn plot_rows(run_dir: &Path, window: usize, clip: Option<f64>) -> Result<Vec<PlotRow>> {
    let runs = read_metrics_dir(run_dir)?;
    let agg = aggregate(&runs)?;
    let returns: Vec<f64> = agg.iter().map(|a| a.mean_return).collect();
    let smooth = windowed(&returns, window);
    Ok(agg
        .iter()
        .zip(smooth)
        .map(|(a, w)| PlotRow {
            iteration: a.iteration,
            return_mean: a.mean_return,
            return_std: a.return_std,
            return_windowed: w,
            value_mean: a.mean_value_estimate,
            value_std: a.value_std,
            value_display: match clip {
                Some(c) => a.mean_value_estimate.clamp(-c, c),
                None => a.mean_value_estimate,
            },
            diverged_seeds: a.diverged_seeds,
        })
        .collect())
}

/// Writes `plots/<env>-<algorithm>.csv` under `metrics_dir` for every run
/// directory found beneath it. Returns the files written.
pub fn emit_plot_data(
    metrics_dir: &Path,
    window: usize,
    clip: Option<f64>,
) -> Result<Vec<PathBuf>> {
    let mut run_dirs = Vec::new();
    find_runs(metrics_dir, &mut run_dirs)?;
    if run_dirs.is_empty() {
        return Err(HarnessError::Schema(format!(
            "no metrics files under {}",
            metrics_dir.display()
        )));
    }
    run_dirs.sort();
    let note = format!(
        "# std columns: population standard deviation across seeds; value_display clipped to {}",
        clip.map_or("none".to_string(), |c| format!("±{c}"))
    );
    let mut written = Vec::new();
    for dir in run_dirs {
        let label_path = dir.join(MANIFEST_FILE);
        let text =
            std::fs::read_to_string(&label_path).map_err(|e| HarnessError::io(&label_path, e))?;
        let label: ManifestLabel = toml::from_str(&text)
            .map_err(|e| HarnessError::Schema(format!("{}: {e}", label_path.display())))?;
        let rows = plot_rows(&dir, window, clip)?;
        let path = metrics_dir.join(PLOT_DIR).join(format!(
            "{}-{}.csv",
            label.env.replace([':', '/'], "_"),
            label.algorithm
        ));
        write_csv(&path, Some(&note), &rows)?;
        written.push(path);
    }
    Ok(written)
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(MANIFEST_FILE).is_file() {
        out.push(dir.to_path_buf());
    }
    for entry in std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if path.is_dir() && path.file_name().is_some_and(|n| n != PLOT_DIR) {
            find_runs(&path, out)?;
        }
    }
    Ok(())
}
