//! Experiment analytics: learning curves, reward distributions, the
//! split-point scatter with its LOESS trend, and sweep harnesses.
//!
//! Everything here is a pure function of its inputs. Outputs are plain
//! serde types written as `<run-id>.<analysis>.csv` or `.json`.

mod loess;
mod summary;
mod sweep;

pub use loess::{loess, ols_slope, TrendFit};
pub use summary::{
    aggregate_curves, interp, moving_average, quantile_sorted, reward_distribution, CurveSummary,
    RewardDistribution, RewardReport, HISTOGRAM_BINS, KDE_POINTS,
};
pub use sweep::{
    action_space_sweep, hyper_grid, hyper_sweep, ppl_sweep, scatter_from_episodes,
    splitpoint_scatter, ChannelPoint, SplitScatter, SweepRow, SweepRun, LOESS_FRAC,
};

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::surrogate::csv_err;

/// `<dir>/<run-id>.<analysis>.<ext>`
pub fn artifact_path(dir: &Path, run_id: &str, analysis: &str, ext: &str) -> PathBuf {
    dir.join(format!("{run_id}.{analysis}.{ext}"))
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub step: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Rows of a learning curve for CSV output.
pub fn curve_rows(c: &CurveSummary) -> Vec<CurveRow> {
    c.steps
        .iter()
        .zip(&c.mean)
        .zip(&c.stderr)
        .map(|((&step, &mean), &stderr)| CurveRow { step, mean, stderr })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScatterRow {
    pub sigma: f64,
    pub p: usize,
    pub trend: f64,
    pub local_slope: f64,
}

pub fn scatter_rows(s: &SplitScatter) -> Vec<ScatterRow> {
    (0..s.p.len())
        .map(|i| ScatterRow {
            sigma: s.sigma[i],
            p: s.p[i],
            trend: s.trend.fitted[i],
            local_slope: s.trend.local_slopes[i],
        })
        .collect()
}
