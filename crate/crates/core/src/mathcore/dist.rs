//! Samplers and densities for the channel model.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use super::rng::RngStream;
use crate::error::{Error, Result};

#[inline]
pub fn standard_normal(rng: &mut RngStream) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw from `N(mean, std²)`. `std = 0` returns `mean` exactly.
pub fn gaussian_sample(rng: &mut RngStream, mean: f64, std: f64) -> Result<f64> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::param(format!(
            "gaussian std must be finite and >= 0, got {std}"
        )));
    }
    if std == 0.0 {
        return Ok(mean);
    }
    Ok(mean + std * standard_normal(rng))
}

/// Gamma(shape, scale) by Marsaglia–Tsang squeeze/rejection.
///
/// Shapes below one use the boost `G(a) = G(a + 1) · U^{1/a}`.
pub fn gamma_sample(rng: &mut RngStream, shape: f64, scale: f64) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
        return Err(Error::param(format!(
            "gamma shape and scale must be positive, got ({shape}, {scale})"
        )));
    }
    Ok(scale * gamma_unit(rng, shape))
}

fn gamma_unit(rng: &mut RngStream, shape: f64) -> f64 {
    if shape < 1.0 {
        let u = loop {
            let u = rng.uniform();
            if u > 0.0 {
                break u;
            }
        };
        return gamma_unit(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u > 0.0 && u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

fn check_nakagami(m: f64, omega: f64) -> Result<()> {
    if !(m > 0.0 && omega > 0.0) || !m.is_finite() || !omega.is_finite() {
        return Err(Error::param(format!(
            "nakagami m and omega must be positive, got m={m}, omega={omega}"
        )));
    }
    Ok(())
}

/// Nakagami-m gain: `sqrt(Gamma(m, Ω/m))`.
pub fn nakagami_sample(rng: &mut RngStream, m: f64, omega: f64) -> Result<f64> {
    check_nakagami(m, omega)?;
    Ok((omega / m * gamma_unit(rng, m)).sqrt())
}

/// Nakagami-m density
/// `f(h) = 2 m^m h^{2m-1} / (Γ(m) Ω^m) · exp(-m h² / Ω)` for `h ≥ 0`.
pub fn nakagami_pdf(h: f64, m: f64, omega: f64) -> Result<f64> {
    check_nakagami(m, omega)?;
    Ok(nakagami_pdf_unchecked(h, m, omega))
}

pub(crate) fn nakagami_pdf_unchecked(h: f64, m: f64, omega: f64) -> f64 {
    if h < 0.0 {
        return 0.0;
    }
    if h == 0.0 {
        return match m.partial_cmp(&0.5) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => (2.0 / (std::f64::consts::PI * omega)).sqrt(),
            _ => 0.0,
        };
    }
    let log_f = std::f64::consts::LN_2 + m * m.ln() + (2.0 * m - 1.0) * h.ln()
        - ln_gamma(m)
        - m * omega.ln()
        - m * h * h / omega;
    log_f.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_gaussian() {
        let mut rng = RngStream::new(1, 0);
        assert_eq!(gaussian_sample(&mut rng, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(gaussian_sample(&mut rng, 3.5, 0.0).unwrap(), 3.5);
        assert!(matches!(
            gaussian_sample(&mut rng, 0.0, -1.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn invalid_nakagami_parameters() {
        let mut rng = RngStream::new(1, 0);
        assert!(nakagami_sample(&mut rng, 0.0, 1.0).is_err());
        assert!(nakagami_sample(&mut rng, 1.0, -1.0).is_err());
        assert!(nakagami_pdf(0.3, -2.0, 1.0).is_err());
        assert!(gamma_sample(&mut rng, 1.0, 0.0).is_err());
    }

    #[test]
    fn rayleigh_density_matches_closed_form() {
        // m = 1: f(h) = 2h/Ω exp(-h²/Ω)
        for &h in &[0.1f64, 0.5, 1.3, 2.0] {
            let want = 2.0 * h / 1.5 * (-h * h / 1.5).exp();
            assert!((nakagami_pdf(h, 1.0, 1.5).unwrap() - want).abs() < 1e-14);
        }
        assert_eq!(nakagami_pdf(-1.0, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn gamma_small_shape_mean() {
        let mut rng = RngStream::new(5, 9);
        let n = 200_000;
        let mean = (0..n)
            .map(|_| gamma_sample(&mut rng, 0.3, 2.0).unwrap())
            .sum::<f64>()
            / n as f64;
        // E = shape · scale = 0.6, sd of mean ≈ sqrt(1.2 / n) ≈ 0.0025
        assert!((mean - 0.6).abs() < 0.01, "{mean}");
    }
}
