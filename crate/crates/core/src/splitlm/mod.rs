//! A small decoder-only transformer that can run in two halves around a
//! splitting point, with its trainer, perplexity estimator and cost model.

mod config;
mod cost;
mod model;
mod ppl;
mod train;
mod vocab;

pub use config::LmConfig;
pub use cost::{c_ue, flops_per_layer};
pub use model::{
    activations_by_layer, lm_forward_edge, lm_forward_full, lm_forward_ue, lm_loss_and_grad, Block,
    IntermediateTensor, LayerNorm, LmParams,
};
pub use ppl::{clean_perplexity, perplexity, perplexity_from_ue, PplEstimate, MIN_PROB};
pub use train::{split_heldout, train_lm, TrainLmOptions, TrainedLm, MIN_CORPUS_CHARS};
pub use vocab::{chunk_sequences, tokenize, TokenSeq, Vocab};

use std::path::Path;

use crate::error::Result;

/// Writes a model checkpoint. The `config` object leads the JSON and acts
/// as the header.
pub fn save_lm(params: &LmParams, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string(params)?)?;
    Ok(())
}

pub fn load_lm(path: &Path) -> Result<LmParams> {
    let params: LmParams = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    params.validate()?;
    Ok(params)
}

pub fn save_vocab(vocab: &Vocab, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(vocab)?)?;
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
