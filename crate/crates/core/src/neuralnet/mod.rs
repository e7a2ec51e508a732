//! Small dense networks with exact backpropagation and Adam.
//!
//! The [`Parameters`] trait lets the optimizer, gradient clipping and the
//! finite-difference checker work on both MLPs and the transformer.

mod adam;
pub mod gradcheck;
mod loss;
mod mlp;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, mlp_grad_check, GradCheckReport};
pub use loss::mse_loss;
pub use mlp::{
    softmax_in_place, softmax_rows, Dense, HiddenActivation, Mlp, MlpCache, MlpSpec,
    OutputActivation,
};
pub use params::{accumulate, all_finite, clip_global_norm, copy_into, global_norm, Parameters};

use std::path::Path;

use crate::error::Result;

/// Writes an MLP checkpoint as JSON.
pub fn save_mlp(mlp: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string(mlp)?)?;
    Ok(())
}

/// Reads and validates an MLP checkpoint.
pub fn load_mlp(path: &Path) -> Result<Mlp> {
    let mlp: Mlp = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    mlp.validate()?;
    Ok(mlp)
}
