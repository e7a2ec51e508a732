use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the layered transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LmConfig {
    /// Number of transformer blocks, `L`.
    pub n_layers: usize,
    /// Context length in tokens, `d_in`.
    pub d_in: usize,
    /// Model width, `d_mid`.
    pub d_mid: usize,
    /// Attention heads, `κ`.
    pub heads: usize,
    /// Feed-forward hidden width.
    pub d_ff: usize,
    /// Vocabulary size including the unknown token.
    pub vocab: usize,
}

impl LmConfig {
    /// Default desk-scale model: 8 blocks of width 64 over a 64-token window.
    pub fn toy(vocab: usize) -> Self {
        LmConfig {
            n_layers: 8,
            d_in: 64,
            d_mid: 64,
            heads: 4,
            d_ff: 256,
            vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let LmConfig {
            n_layers,
            d_in,
            d_mid,
            heads,
            d_ff,
            vocab,
        } = *self;
        if n_layers < 2 {
            return Err(Error::param(format!(
                "need at least 2 layers, got {n_layers}"
            )));
        }
        if d_in == 0 || d_mid == 0 || heads == 0 || d_ff == 0 || vocab == 0 {
            return Err(Error::param(format!(
                "all model dimensions must be positive: {self:?}"
            )));
        }
        if d_mid % heads != 0 {
            return Err(Error::param(format!(
                "width {d_mid} not divisible by {heads} heads"
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_mid / self.heads
    }

    /// Largest valid splitting point; the edge always keeps one block.
    pub fn max_split(&self) -> usize {
        self.n_layers - 1
    }

    pub fn check_split(&self, p: usize) -> Result<()> {
        if p < 1 || p > self.max_split() {
            return Err(Error::InvalidSplit {
                p,
                min: 1,
                max: self.max_split(),
            });
        }
        Ok(())
    }
}
