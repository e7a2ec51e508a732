//! Wireless impairment between the device half and the edge half of the
//! model: Nakagami-m fading, additive Gaussian noise and per-element loss.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::mathcore::dist::nakagami_pdf_unchecked;
use crate::mathcore::{bisect, gaussian_sample, nakagami_sample, quad_adaptive, Matrix, RngStream};

/// Search bracket for [`calibrate_m`].
pub const M_MIN: f64 = 0.1;
pub const M_MAX: f64 = 50.0;

const LOSS_QUAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    /// Unit gain, noise only. `h_th` is ignored and nothing is lost.
    Awgn,
    Nakagami,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FadingGranularity {
    /// Independent gain per tensor element.
    #[default]
    PerElement,
    /// One gain shared by the whole tensor.
    PerTensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub mode: ChannelMode,
    #[serde(default = "default_m")]
    pub m: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
    pub sigma: f64,
    #[serde(default = "default_h_th")]
    pub h_th: f64,
    #[serde(default)]
    pub granularity: FadingGranularity,
    /// Divide surviving elements by their gain (`y + n/h`) instead of
    /// delivering `h·y + n`.
    #[serde(default)]
    pub equalize: bool,
}

fn default_m() -> f64 {
    1.0
}
fn default_omega() -> f64 {
    1.0
}
fn default_h_th() -> f64 {
    0.5
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams::nakagami(1.0, 1.0, 0.1, 0.5)
    }
}

impl ChannelParams {
    /// Identity channel: unit gain, no noise, no loss.
    pub fn ideal() -> Self {
        Self::awgn(0.0)
    }

    pub fn awgn(sigma: f64) -> Self {
        ChannelParams {
            mode: ChannelMode::Awgn,
            m: default_m(),
            omega: default_omega(),
            sigma,
            h_th: 0.0,
            granularity: FadingGranularity::PerElement,
            equalize: false,
        }
    }

    pub fn nakagami(m: f64, omega: f64, sigma: f64, h_th: f64) -> Self {
        ChannelParams {
            mode: ChannelMode::Nakagami,
            m,
            omega,
            sigma,
            h_th,
            granularity: FadingGranularity::PerElement,
            equalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::param(format!(
                "noise std must be >= 0, got {}",
                self.sigma
            )));
        }
        if self.mode == ChannelMode::Nakagami {
            if !(self.m > 0.0 && self.omega > 0.0) || !self.m.is_finite() || !self.omega.is_finite()
            {
                return Err(Error::param(format!(
                    "nakagami channel needs m > 0 and omega > 0, got m={}, omega={}",
                    self.m, self.omega
                )));
            }
            if !(self.h_th >= 0.0) {
                return Err(Error::param(format!(
                    "loss threshold must be >= 0, got {}",
                    self.h_th
                )));
            }
        }
        Ok(())
    }

    /// Probability that a single element is lost.
    pub fn loss_probability(&self) -> Result<f64> {
        match self.mode {
            ChannelMode::Awgn => Ok(0.0),
            ChannelMode::Nakagami => packet_loss_prob(self.m, self.omega, self.h_th),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    /// Fraction of elements dropped.
    pub loss_fraction: f64,
    /// Mean gain over surviving elements (0 when everything was lost).
    pub mean_gain: f64,
}

/// Passes `y` through the channel.
///
/// Each element draws a gain `h` (1 in AWGN mode). Elements with `h < h_th`
/// are lost and delivered as 0; the others arrive as `h·y + n`,
/// `n ~ N(0, σ²)`.
pub fn apply_channel(
    y: &Matrix,
    params: &ChannelParams,
    rng: &mut RngStream,
) -> Result<(Matrix, ChannelStats)> {
    params.validate()?;
    let mut out = y.clone();
    let n = y.data().len();
    if n == 0 {
        return Ok((
            out,
            ChannelStats {
                loss_fraction: 0.0,
                mean_gain: 1.0,
            },
        ));
    }
    let sigma = params.sigma;
    match params.mode {
        ChannelMode::Awgn => {
            if sigma > 0.0 {
                for v in out.data_mut() {
                    *v += gaussian_sample(rng, 0.0, sigma)?;
                }
            }
            Ok((
                out,
                ChannelStats {
                    loss_fraction: 0.0,
                    mean_gain: 1.0,
                },
            ))
        }
        ChannelMode::Nakagami => {
            let shared = match params.granularity {
                FadingGranularity::PerTensor => Some(nakagami_sample(rng, params.m, params.omega)?),
                FadingGranularity::PerElement => None,
            };
            let mut lost = 0usize;
            let mut gain_sum = 0.0;
            for v in out.data_mut() {
                let h = match shared {
                    Some(h) => h,
                    None => nakagami_sample(rng, params.m, params.omega)?,
                };
                if h < params.h_th {
                    *v = 0.0;
                    lost += 1;
                    continue;
                }
                let noise = gaussian_sample(rng, 0.0, sigma)?;
                *v = if params.equalize {
                    *v + noise / h
                } else {
                    h * *v + noise
                };
                gain_sum += h;
            }
            let survived = n - lost;
            Ok((
                out,
                ChannelStats {
                    loss_fraction: lost as f64 / n as f64,
                    mean_gain: if survived > 0 {
                        gain_sum / survived as f64
                    } else {
                        0.0
                    },
                },
            ))
        }
    }
}

/// `P(h < h_th)` for Nakagami-m gain, integrating the density numerically.
///
/// For `m < 1` the integral is taken in `u = h^{2m}`, which removes the
/// `h^{2m-1}` endpoint singularity:
/// `∫₀^{h_th^{2m}} m^{m-1} / (Γ(m) Ω^m) · exp(-m u^{1/m} / Ω) du`.
pub fn packet_loss_prob(m: f64, omega: f64, h_th: f64) -> Result<f64> {
    if !(m > 0.0 && omega > 0.0) || !m.is_finite() || !omega.is_finite() {
        return Err(Error::param(format!(
            "need m > 0 and omega > 0, got m={m}, omega={omega}"
        )));
    }
    if !(h_th >= 0.0) || !h_th.is_finite() {
        return Err(Error::param(format!(
            "loss threshold must be finite and >= 0, got {h_th}"
        )));
    }
    if h_th == 0.0 {
        return Ok(0.0);
    }
    let p = if m < 1.0 {
        let log_c = (m - 1.0) * m.ln() - ln_gamma(m) - m * omega.ln();
        let upper = h_th.powf(2.0 * m);
        quad_adaptive(
            |u| (log_c - m * u.powf(1.0 / m) / omega).exp(),
            0.0,
            upper,
            LOSS_QUAD_TOL,
        )?
    } else {
        quad_adaptive(
            |h| nakagami_pdf_unchecked(h, m, omega),
            0.0,
            h_th,
            LOSS_QUAD_TOL,
        )?
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Fading shape `m` whose loss probability equals `p_target`, by bisection
/// over `m ∈ [0.1, 50]`.
pub fn calibrate_m(p_target: f64, omega: f64, h_th: f64) -> Result<f64> {
    calibrate_m_in(p_target, omega, h_th, M_MIN, M_MAX)
}

pub fn calibrate_m_in(p_target: f64, omega: f64, h_th: f64, m_lo: f64, m_hi: f64) -> Result<f64> {
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::param(format!(
            "target loss probability must be in (0, 1), got {p_target}"
        )));
    }
    let p_at_lo = packet_loss_prob(m_lo, omega, h_th)?;
    let p_at_hi = packet_loss_prob(m_hi, omega, h_th)?;
    let (pmin, pmax) = (p_at_lo.min(p_at_hi), p_at_lo.max(p_at_hi));
    if p_target < pmin || p_target > pmax {
        return Err(Error::Calibration {
            target: p_target,
            m_lo,
            m_hi,
            p_at_lo,
            p_at_hi,
        });
    }
    // quadrature errors are far below the target accuracy, so the bracket
    // check above guarantees a sign change
    let f = |m: f64| {
        packet_loss_prob(m, omega, h_th)
            .map(|p| p - p_target)
            .unwrap_or(f64::NAN)
    };
    bisect(f, m_lo, m_hi, 1e-10 * m_hi.max(1.0))
}

/// Noise std for a target SNR given the signal RMS: `rms / 10^{snr/20}`.
pub fn snr_to_sigma(snr_db: f64, signal_rms: f64) -> Result<f64> {
    if !(signal_rms > 0.0) || !snr_db.is_finite() {
        return Err(Error::param(format!(
            "signal rms must be positive and snr finite, got rms={signal_rms}, snr={snr_db}"
        )));
    }
    Ok(signal_rms / 10f64.powf(snr_db / 20.0))
}

/// Precomputed inverse of the loss-probability curve over a fixed range,
/// so per-step channel redraws avoid repeated quadrature and bisection.
///
/// Nodes are exact calibrations; between nodes `ln m` is interpolated
/// linearly in the loss probability. Targets below what `m = 50` can reach
/// map to `m = 50`, targets above what `m = 0.1` reaches map to `m = 0.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCalibration {
    pub omega: f64,
    pub h_th: f64,
    losses: Vec<f64>,
    ms: Vec<f64>,
}

impl LossCalibration {
    pub fn new(omega: f64, h_th: f64, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::param(format!(
                "loss range must satisfy 0 <= lo <= hi < 1, got [{lo}, {hi}]"
            )));
        }
        let p_floor = packet_loss_prob(M_MAX, omega, h_th)?;
        let p_ceil = packet_loss_prob(M_MIN, omega, h_th)?;
        let nodes = if hi > lo { nodes.max(2) } else { 1 };
        let mut losses = Vec::with_capacity(nodes);
        let mut ms = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let p = if nodes == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (nodes - 1) as f64
            };
            let m = if p <= p_floor.min(p_ceil) {
                if p_floor <= p_ceil {
                    M_MAX
                } else {
                    M_MIN
                }
            } else if p >= p_floor.max(p_ceil) {
                if p_floor <= p_ceil {
                    M_MIN
                } else {
                    M_MAX
                }
            } else {
                calibrate_m(p, omega, h_th)?
            };
            losses.push(p);
            ms.push(m);
        }
        Ok(LossCalibration {
            omega,
            h_th,
            losses,
            ms,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.losses[0], *self.losses.last().expect("non-empty"))
    }

    /// Shape `m` for a loss probability inside the calibrated range.
    pub fn m_for(&self, loss: f64) -> f64 {
        let n = self.losses.len();
        if n == 1 || loss <= self.losses[0] {
            return self.ms[0];
        }
        if loss >= self.losses[n - 1] {
            return self.ms[n - 1];
        }
        let i = self.losses.partition_point(|&x| x <= loss).clamp(1, n - 1);
        let (x0, x1) = (self.losses[i - 1], self.losses[i]);
        let t = (loss - x0) / (x1 - x0);
        let (l0, l1) = (self.ms[i - 1].ln(), self.ms[i].ln());
        (l0 + t * (l1 - l0)).exp()
    }

    /// Range of `m` covered, `(min, max)`.
    pub fn m_range(&self) -> (f64, f64) {
        let a = self.ms[0];
        let b = *self.ms.last().expect("non-empty");
        (a.min(b), a.max(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_channel() {
        let y = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.5]).unwrap();
        let mut rng = RngStream::new(1, 1);
        let (out, stats) = apply_channel(&y, &ChannelParams::ideal(), &mut rng).unwrap();
        assert_eq!(out, y);
        assert_eq!(stats.loss_fraction, 0.0);
    }

    #[test]
    fn awgn_never_drops() {
        let y = Matrix::filled(10, 10, 1.0);
        let mut rng = RngStream::new(2, 1);
        let mut p = ChannelParams::awgn(2.0);
        p.h_th = 1e6;
        let (out, stats) = apply_channel(&y, &p, &mut rng).unwrap();
        assert_eq!(stats.loss_fraction, 0.0);
        assert!(out.data().iter().all(|&v| v != 0.0));
    }

    #[test]
    fn total_loss() {
        let y = Matrix::filled(4, 8, 1.0);
        let mut rng = RngStream::new(3, 1);
        let (out, stats) =
            apply_channel(&y, &ChannelParams::nakagami(1.0, 1.0, 0.3, 1e6), &mut rng).unwrap();
        assert_eq!(stats.loss_fraction, 1.0);
        assert_eq!(stats.mean_gain, 0.0);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_preserving_and_deterministic() {
        let y = Matrix::from_vec(3, 5, (0..15).map(|i| i as f64 - 7.0).collect()).unwrap();
        let p = ChannelParams::nakagami(2.0, 1.0, 0.2, 0.5);
        let rng = RngStream::new(9, 4);
        let (a, sa) = apply_channel(&y, &p, &mut rng.clone()).unwrap();
        let (b, sb) = apply_channel(&y, &p, &mut rng.clone()).unwrap();
        assert_eq!(a.shape(), y.shape());
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn equalized_survivors_keep_scale() {
        let y = Matrix::filled(50, 50, 2.0);
        let mut p = ChannelParams::nakagami(1.0, 1.0, 0.0, 0.3);
        p.equalize = true;
        let (out, _) = apply_channel(&y, &p, &mut RngStream::new(5, 5)).unwrap();
        assert!(out
            .data()
            .iter()
            .all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn per_tensor_fading_is_all_or_nothing() {
        let y = Matrix::filled(8, 8, 1.0);
        let mut p = ChannelParams::nakagami(0.5, 1.0, 0.0, 0.5);
        p.granularity = FadingGranularity::PerTensor;
        for s in 0..20 {
            let (_, st) = apply_channel(&y, &p, &mut RngStream::new(s, 0)).unwrap();
            assert!(st.loss_fraction == 0.0 || st.loss_fraction == 1.0);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let y = Matrix::zeros(1, 1);
        let mut rng = RngStream::new(0, 0);
        assert!(apply_channel(&y, &ChannelParams::nakagami(0.0, 1.0, 0.1, 0.5), &mut rng).is_err());
        assert!(apply_channel(&y, &ChannelParams::awgn(-0.1), &mut rng).is_err());
        assert!(packet_loss_prob(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn rayleigh_loss_probability() {
        assert_eq!(packet_loss_prob(1.0, 1.0, 0.0).unwrap(), 0.0);
        let p = packet_loss_prob(1.0, 1.0, 0.3).unwrap();
        assert!((p - (1.0 - (-0.09f64).exp())).abs() < 1e-6);
        assert!((p - 0.086069).abs() < 1e-6);
    }

    #[test]
    fn loss_probability_grows_with_threshold() {
        for &(m, omega) in &[(0.3, 1.0), (1.0, 1.0), (2.5, 0.7), (8.0, 2.0)] {
            assert!(
                packet_loss_prob(m, omega, 0.5).unwrap() > packet_loss_prob(m, omega, 0.3).unwrap()
            );
        }
    }

    #[test]
    fn small_m_matches_integer_free_identity() {
        // m = 0.5: h is half-normal with variance Ω, so P(h < t) = erf(t / sqrt(2Ω))
        let t: f64 = 0.4;
        let want = statrs::function::erf::erf(t / 2f64.sqrt());
        assert!((packet_loss_prob(0.5, 1.0, t).unwrap() - want).abs() < 1e-8);
        // the substituted branch agrees with the direct branch near m = 1
        let a = packet_loss_prob(0.999_999, 1.0, 0.5).unwrap();
        let b = packet_loss_prob(1.0, 1.0, 0.5).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn calibration_roundtrip() {
        let m = calibrate_m(0.2, 1.0, 0.5).unwrap();
        assert!((packet_loss_prob(m, 1.0, 0.5).unwrap() - 0.2).abs() < 1e-6);
        let p1 = packet_loss_prob(1.0, 1.0, 0.5).unwrap();
        assert!((calibrate_m(p1, 1.0, 0.5).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn calibration_monotone() {
        let targets = [0.02, 0.05, 0.1, 0.2, 0.3, 0.5];
        let ms: Vec<f64> = targets
            .iter()
            .map(|&p| calibrate_m(p, 1.0, 0.5).unwrap())
            .collect();
        for w in ms.windows(2) {
            assert!(w[0] > w[1], "{ms:?}");
        }
    }

    #[test]
    fn calibration_out_of_bracket() {
        match calibrate_m(0.99, 1.0, 0.5) {
            Err(Error::Calibration {
                p_at_lo, p_at_hi, ..
            }) => {
                assert!(p_at_lo < 0.99 && p_at_hi < 0.99);
            }
            other => panic!("expected calibration error, got {other:?}"),
        }
    }

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_to_sigma(0.0, 1.0).unwrap(), 1.0);
        assert!((snr_to_sigma(20.0, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((snr_to_sigma(-6.0206, 2.0).unwrap() - 4.0).abs() < 1e-6);
        assert!((snr_to_sigma(-20.0 * 2f64.log10(), 2.0).unwrap() - 4.0).abs() < 1e-12);
        assert!(snr_to_sigma(10.0, 0.0).is_err());
    }

    #[test]
    fn calibration_table() {
        let table = LossCalibration::new(1.0, 0.5, 0.0, 0.3, 41).unwrap();
        assert_eq!(table.m_for(0.0), M_MAX);
        for &p in &[0.05, 0.1, 0.2, 0.3] {
            let m = table.m_for(p);
            assert!(
                (packet_loss_prob(m, 1.0, 0.5).unwrap() - p).abs() < 2e-3,
                "p={p} m={m}"
            );
        }
        let fixed = LossCalibration::new(1.0, 0.5, 0.05, 0.05, 10).unwrap();
        let m = fixed.m_for(0.05);
        assert!((m - calibrate_m(0.05, 1.0, 0.5).unwrap()).abs() < 1e-12);
    }
}
