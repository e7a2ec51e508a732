use super::config::LmConfig;
use crate::error::{Error, Result};

/// Floating-point operations of one layer:
/// `3·d_in·d_mid²/κ + 2·d_in²·d_mid/κ + 9·d_in·d_mid²`.
///
/// The two divided terms are floored separately when `κ` does not divide
/// them; every shipped configuration divides exactly.
pub fn flops_per_layer(config: &LmConfig) -> u64 {
    let d_in = config.d_in as u64;
    let d = config.d_mid as u64;
    let k = config.heads as u64;
    3 * d_in * d * d / k + 2 * d_in * d_in * d / k + 9 * d_in * d * d
}

/// Device-side cost of running `p` layers.
pub fn c_ue(config: &LmConfig, p: usize) -> Result<u64> {
    if p < 1 || p > config.n_layers {
        return Err(Error::InvalidSplit {
            p,
            min: 1,
            max: config.n_layers,
        });
    }
    Ok(p as u64 * flops_per_layer(config))
}
