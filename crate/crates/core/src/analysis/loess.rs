use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// LOESS fit evaluated at the input abscissae.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub x: Vec<f64>,
    pub fitted: Vec<f64>,
    /// Slope of the local line at each point (0 for local constants).
    pub local_slopes: Vec<f64>,
    /// Least-squares slope of the fitted curve against `x`.
    pub global_slope: f64,
    /// `1 − SS_res / SS_tot` of the fit against the data.
    pub r_squared: f64,
}

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

/// Weighted local fit at `x0`: returns (value, slope).
fn local_fit(xs: &[f64], ys: &[f64], x0: f64, k: usize, degree: u8) -> (f64, f64) {
    let mut dist: Vec<f64> = xs.iter().map(|x| (x - x0).abs()).collect();
    let mut sorted = dist.clone();
    sorted.sort_by(f64::total_cmp);
    let h = sorted[k - 1];
    for d in &mut dist {
        *d = if h > 0.0 {
            tricube(*d / h)
        } else if *d == 0.0 {
            1.0
        } else {
            0.0
        };
    }
    let w = dist;
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    if degree == 0 {
        return (my, 0.0);
    }
    let sxx: f64 = w.iter().zip(xs).map(|(w, x)| w * (x - mx) * (x - mx)).sum();
    let sxy: f64 = w
        .iter()
        .zip(xs)
        .zip(ys)
        .map(|((w, x), y)| w * (x - mx) * (y - my))
        .sum();
    // all weight on one abscissa: no line through it is better than the mean
    let spread = xs
        .iter()
        .zip(&w)
        .filter(|(_, &w)| w > 0.0)
        .map(|(x, _)| (x - mx).abs())
        .fold(0.0, f64::max);
    if spread <= 1e-12 * (1.0 + mx.abs()) || sxx <= 0.0 {
        return (my, 0.0);
    }
    let b = sxy / sxx;
    (my + b * (x0 - mx), b)
}

/// Least-squares slope of `y` on `x` (0 when `x` is constant).
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 0.0 {
        return 0.0;
    }
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / sxx
}

/// Locally weighted regression with tricube weights over the nearest
/// `⌈frac·n⌉` points. `degree` is 0 (local mean) or 1 (local line).
pub fn loess(x: &[f64], y: &[f64], frac: f64, degree: u8) -> Result<TrendFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::shape(format!(
            "loess: {} x values but {} y values",
            n,
            y.len()
        )));
    }
    if n < 5 {
        return Err(Error::InvalidInput(format!(
            "loess needs at least 5 points, got {n}"
        )));
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::param(format!(
            "loess span must lie in (0, 1], got {frac}"
        )));
    }
    if degree > 1 {
        return Err(Error::param(format!(
            "loess degree must be 0 or 1, got {degree}"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("loess inputs must be finite".into()));
    }
    // canonical order makes the fit independent of input order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let k = ((frac * n as f64).ceil() as usize).clamp(2, n);

    let mut fitted = vec![0.0; n];
    let mut slopes = vec![0.0; n];
    for (i, &x0) in x.iter().enumerate() {
        let (v, b) = local_fit(&xs, &ys, x0, k, degree);
        fitted[i] = v;
        slopes[i] = b;
    }
    let my = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    Ok(TrendFit {
        x: x.to_vec(),
        global_slope: ols_slope(x, &fitted),
        fitted,
        local_slopes: slopes,
        r_squared,
    })
}
