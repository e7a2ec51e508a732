use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentKind, RunLog};
use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 20;
pub const KDE_POINTS: usize = 100;

/// Violin-plot data for a sample of rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDistribution {
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
    /// Bin edges (`HISTOGRAM_BINS + 1` values) and counts.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub bandwidth: f64,
    pub kde_x: Vec<f64>,
    pub kde_density: Vec<f64>,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn reward_distribution(rewards: &[f64]) -> Result<RewardDistribution> {
    if rewards.is_empty() {
        return Err(Error::InvalidInput(
            "reward distribution of an empty sample".into(),
        ));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput("rewards must be finite".into()));
    }
    let mut s = rewards.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let (min, max) = (s[0], s[n - 1]);
    let (q25, median, q75) = (
        quantile_sorted(&s, 0.25),
        quantile_sorted(&s, 0.5),
        quantile_sorted(&s, 0.75),
    );
    let iqr = q75 - q25;

    let width = (max - min) / HISTOGRAM_BINS as f64;
    let mut bin_edges: Vec<f64> = (0..=HISTOGRAM_BINS)
        .map(|i| min + i as f64 * width)
        .collect();
    bin_edges[HISTOGRAM_BINS] = max;
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for &r in &s {
        let b = if width > 0.0 {
            ((r - min) / width) as usize
        } else {
            0
        };
        counts[b.min(HISTOGRAM_BINS - 1)] += 1;
    }

    let mean = s.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let bandwidth = 0.9 * spread * (n as f64).powf(-0.2);

    let (kde_x, kde_density) = if bandwidth > 0.0 {
        let lo = min - 3.0 * bandwidth;
        let hi = max + 3.0 * bandwidth;
        let xs: Vec<f64> = (0..KDE_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (KDE_POINTS - 1) as f64)
            .collect();
        let norm = 1.0 / (n as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
        let ds = xs
            .iter()
            .map(|x| {
                norm * s
                    .iter()
                    .map(|v| (-0.5 * ((x - v) / bandwidth).powi(2)).exp())
                    .sum::<f64>()
            })
            .collect();
        (xs, ds)
    } else {
        // zero spread: a unit-mass spike on the grid point at the sample value
        let xs: Vec<f64> = (0..KDE_POINTS)
            .map(|i| min - 0.5 + i as f64 / (KDE_POINTS - 1) as f64)
            .collect();
        let dx = 1.0 / (KDE_POINTS - 1) as f64;
        let centre = xs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - min).abs().total_cmp(&(b.1 - min).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut ds = vec![0.0; KDE_POINTS];
        ds[centre] = 1.0 / dx;
        (xs, ds)
    };

    Ok(RewardDistribution {
        n,
        median,
        q25,
        q75,
        iqr,
        min,
        max,
        bin_edges,
        counts,
        bandwidth,
        kde_x,
        kde_density,
    })
}

/// Affine map `scale · r + offset` applied to rewards in reports only;
/// logs keep the raw values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardReport {
    pub scale: f64,
    pub offset: f64,
}

impl Default for RewardReport {
    fn default() -> Self {
        RewardReport {
            scale: 1.0,
            offset: 0.0,
        }
    }
}

impl RewardReport {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale != 0.0 && self.offset.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "reward report needs a finite nonzero scale and finite offset, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn apply(&self, r: f64) -> f64 {
        self.scale * r + self.offset
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.offset == 0.0
    }
}

/// Trailing moving average; the first `window − 1` points average what is
/// available.
pub fn moving_average(y: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    for i in 0..y.len() {
        acc += y[i];
        if i >= w {
            acc -= y[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`, flat beyond the ends.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    ys[j - 1] + (ys[j] - ys[j - 1]) * (x - x0) / (x1 - x0)
}

/// Learning curve of one agent: cross-seed mean and standard error of the
/// smoothed episode return against the environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub agent: AgentKind,
    pub runs: usize,
    pub steps: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Some runs were interpolated onto the first run's step grid.
    pub regridded: bool,
}

pub fn aggregate_curves(logs: &[RunLog], window: usize) -> Result<Vec<CurveSummary>> {
    let mut groups: BTreeMap<String, Vec<&RunLog>> = BTreeMap::new();
    for log in logs {
        if log.episodes.is_empty() {
            return Err(Error::InvalidInput(format!(
                "run {} has no finished episodes",
                log.run_id
            )));
        }
        groups.entry(log.agent.to_string()).or_default().push(log);
    }
    let mut out = Vec::new();
    for runs in groups.values() {
        let grid: Vec<f64> = runs[0].episodes.iter().map(|e| e.end_step as f64).collect();
        let mut regridded = false;
        let series: Vec<Vec<f64>> = runs
            .iter()
            .map(|log| {
                let xs: Vec<f64> = log.episodes.iter().map(|e| e.end_step as f64).collect();
                let ys = moving_average(
                    &log.episodes
                        .iter()
                        .map(|e| e.total_reward)
                        .collect::<Vec<_>>(),
                    window,
                );
                if xs == grid {
                    ys
                } else {
                    regridded = true;
                    grid.iter().map(|&x| interp(&xs, &ys, x)).collect()
                }
            })
            .collect();
        let k = series.len() as f64;
        let mut mean = vec![0.0; grid.len()];
        let mut stderr = vec![0.0; grid.len()];
        for i in 0..grid.len() {
            let m = series.iter().map(|s| s[i]).sum::<f64>() / k;
            mean[i] = m;
            if series.len() > 1 {
                let var = series.iter().map(|s| (s[i] - m) * (s[i] - m)).sum::<f64>() / (k - 1.0);
                stderr[i] = (var / k).sqrt();
            }
        }
        if regridded {
            log::warn!(
                "{} runs of {} had different step grids and were interpolated",
                runs.len(),
                runs[0].agent
            );
        }
        out.push(CurveSummary {
            agent: runs[0].agent,
            runs: runs.len(),
            steps: grid,
            mean,
            stderr,
            regridded,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::EpisodeRow;
    use crate::mathcore::{dist::standard_normal, RngStream};

    #[test]
    fn small_sample_quantiles() {
        let d = reward_distribution(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((d.median, d.q25, d.q75), (2.0, 1.5, 2.5));
        assert_eq!(d.counts.iter().sum::<usize>(), 3);
        assert_eq!(d.kde_x.len(), KDE_POINTS);
    }

    #[test]
    fn constant_sample_is_a_spike() {
        let d = reward_distribution(&[-4.0; 10]).unwrap();
        assert_eq!(d.iqr, 0.0);
        assert_eq!(d.bandwidth, 0.0);
        assert_eq!(d.kde_density.iter().filter(|&&v| v > 0.0).count(), 1);
        let dx = d.kde_x[1] - d.kde_x[0];
        assert!((d.kde_density.iter().sum::<f64>() * dx - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normal_sample_quantiles() {
        let mut rng = RngStream::new(17, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| standard_normal(&mut rng)).collect();
        let d = reward_distribution(&xs).unwrap();
        assert!(d.median.abs() < 0.02, "{}", d.median);
        assert!((d.iqr - 1.349).abs() < 0.03, "{}", d.iqr);
        let dx = d.kde_x[1] - d.kde_x[0];
        assert!((d.kde_density.iter().sum::<f64>() * dx - 1.0).abs() < 0.02);
    }

    #[test]
    fn report_transform_is_monotone_for_positive_scale() {
        let rep = RewardReport {
            scale: 0.1,
            offset: 5.0,
        };
        assert_eq!(rep.apply(-20.0), 3.0);
        let raw = [-40.0, -30.0, -35.0, -50.0];
        let d = reward_distribution(&raw).unwrap();
        let mapped: Vec<f64> = raw.iter().map(|&r| rep.apply(r)).collect();
        let dm = reward_distribution(&mapped).unwrap();
        assert!((dm.median - rep.apply(d.median)).abs() < 1e-12);
        assert!(RewardReport::default().is_identity());
        assert!(RewardReport { scale: 0.0, offset: 0.0 }.validate().is_err());
    }

    #[test]
    fn moving_average_by_hand() {
        let y = [1.0, 2.0, 4.0, 8.0, 16.0];
        assert_eq!(moving_average(&y, 1), y.to_vec());
        let want = [1.0, 1.5, 7.0 / 3.0, 14.0 / 3.0, 28.0 / 3.0];
        for (a, b) in moving_average(&y, 3).iter().zip(want) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    fn log(agent: AgentKind, ends: &[usize], rewards: &[f64]) -> RunLog {
        let mut l = RunLog::new("r", agent, 0, "");
        l.episodes = ends
            .iter()
            .zip(rewards)
            .enumerate()
            .map(|(i, (&e, &r))| EpisodeRow {
                episode: i,
                end_step: e,
                total_reward: r,
            })
            .collect();
        l
    }

    #[test]
    fn curves_identity_and_zero_spread() {
        let a = log(AgentKind::Ppo, &[5, 10, 15], &[-3.0, -2.0, -1.0]);
        let one = aggregate_curves(&[a.clone()], 1).unwrap();
        assert_eq!(one[0].mean, vec![-3.0, -2.0, -1.0]);
        let two = aggregate_curves(&[a.clone(), a], 2).unwrap();
        assert_eq!(two[0].runs, 2);
        assert!(two[0].stderr.iter().all(|&s| s == 0.0));
        assert_eq!(two[0].mean, vec![-3.0, -2.5, -1.5]);
    }

    #[test]
    fn mismatched_grids_are_flagged() {
        let a = log(AgentKind::A2c, &[5, 10, 15], &[0.0, 1.0, 2.0]);
        let b = log(AgentKind::A2c, &[4, 12], &[0.0, 2.0]);
        let c = aggregate_curves(&[a, b], 1).unwrap();
        assert!(c[0].regridded);
        // b interpolated at 5, 10, 15: 0.25, 1.5, 2.0
        assert!((c[0].mean[0] - 0.125).abs() < 1e-12);
        assert!((c[0].mean[1] - 1.25).abs() < 1e-12);
    }
}
