use serde::{Deserialize, Serialize};

use super::config::LmConfig;
use super::model::{lm_loss_and_grad, LmParams};
use super::vocab::{chunk_sequences, TokenSeq, Vocab};
use crate::error::{Error, Result};
use crate::mathcore::RngStream;
use crate::neuralnet::{all_finite, clip_global_norm, AdamConfig, AdamState};

/// Smallest corpus `train_lm` accepts, in characters.
pub const MIN_CORPUS_CHARS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainLmOptions {
    pub steps: usize,
    /// Peak learning rate.
    pub lr: f64,
    pub batch_size: usize,
    pub warmup: usize,
    pub clip_norm: f64,
    /// Floor of the cosine schedule as a fraction of `lr`.
    pub min_lr_frac: f64,
    /// Tail of the corpus held out from training.
    pub holdout_frac: f64,
}

impl Default for TrainLmOptions {
    fn default() -> Self {
        TrainLmOptions {
            steps: 1500,
            lr: 3e-3,
            batch_size: 16,
            warmup: 50,
            clip_norm: 1.0,
            min_lr_frac: 0.1,
            holdout_frac: 0.1,
        }
    }
}

impl TrainLmOptions {
    fn lr_at(&self, step: usize) -> f64 {
        let warm = ((step + 1) as f64 / self.warmup.max(1) as f64).min(1.0);
        let progress = step as f64 / self.steps.max(1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * warm * (self.min_lr_frac + (1.0 - self.min_lr_frac) * cosine)
    }
}

/// Output of [`train_lm`].
#[derive(Debug, Clone)]
pub struct TrainedLm {
    pub params: LmParams,
    pub vocab: Vocab,
    /// Per-step training cross-entropy.
    pub losses: Vec<f64>,
    /// Non-overlapping context-length windows from the training split.
    pub train_seqs: Vec<TokenSeq>,
    /// Non-overlapping context-length windows from the held-out tail.
    pub heldout_seqs: Vec<TokenSeq>,
}

/// Training prefix and held-out tail of an encoded corpus.
pub fn split_heldout(ids: &[u32], holdout_frac: f64) -> (&[u32], &[u32]) {
    ids.split_at(ids.len() - (ids.len() as f64 * holdout_frac) as usize)
}

/// Trains a character-level model on `text`.
///
/// The vocabulary is built from the whole text and `config.vocab` is
/// replaced by its size. Batches are random context-length windows of the
/// training split; the learning rate warms up linearly then decays on a
/// cosine.
pub fn train_lm(
    text: &str,
    config: LmConfig,
    opts: &TrainLmOptions,
    rng: &mut RngStream,
) -> Result<TrainedLm> {
    let n_chars = text.chars().count();
    if n_chars < MIN_CORPUS_CHARS {
        return Err(Error::InvalidInput(format!(
            "corpus has {n_chars} characters, at least {MIN_CORPUS_CHARS} are needed"
        )));
    }
    if opts.batch_size == 0 || !(opts.lr > 0.0) || !(0.0..0.5).contains(&opts.holdout_frac) {
        return Err(Error::param(format!("invalid training options {opts:?}")));
    }
    let vocab = Vocab::from_text(text);
    let config = LmConfig {
        vocab: vocab.size(),
        ..config
    };
    config.validate()?;
    let ids = vocab.encode(text);
    let (train, held) = split_heldout(&ids, opts.holdout_frac);
    let len = config.d_in;
    if train.len() < len + 1 {
        return Err(Error::InvalidInput(
            "training split is shorter than one context window".into(),
        ));
    }

    let mut init_rng = rng.derive("splitlm.init");
    let mut batch_rng = rng.derive("splitlm.batches");
    let mut params = LmParams::init(config, &mut init_rng)?;
    let mut adam = AdamState::new(&params, AdamConfig::with_lr(opts.lr));
    let mut losses = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let starts: Vec<usize> = (0..opts.batch_size)
            .map(|_| batch_rng.below(train.len() - len + 1))
            .collect();
        let batch: Vec<&[u32]> = starts.iter().map(|&s| &train[s..s + len]).collect();
        let (loss, mut grad) = lm_loss_and_grad(&params, &batch)?;
        if !loss.is_finite() || !all_finite(&grad) {
            return Err(Error::TrainingFailure { step });
        }
        clip_global_norm(&mut grad, opts.clip_norm);
        adam.config.lr = opts.lr_at(step);
        adam.step(&mut params, &grad)?;
        losses.push(loss);
        if step % 100 == 0 {
            log::debug!("lm step {step}: loss {loss:.4}");
        }
    }
    if !all_finite(&params) {
        return Err(Error::TrainingFailure { step: opts.steps });
    }
    Ok(TrainedLm {
        params,
        vocab,
        losses,
        train_seqs: chunk_sequences(train, len, len),
        heldout_seqs: chunk_sequences(held, len, len),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_corpus() {
        let cfg = LmConfig::toy(0);
        let r = train_lm(
            "too short",
            cfg,
            &TrainLmOptions::default(),
            &mut RngStream::new(0, 0),
        );
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn schedule_shape() {
        let o = TrainLmOptions {
            steps: 100,
            warmup: 10,
            ..Default::default()
        };
        assert!(o.lr_at(0) < o.lr_at(9));
        assert!((o.lr_at(9) - o.lr).abs() < 0.05 * o.lr);
        assert!(o.lr_at(99) < 0.2 * o.lr && o.lr_at(99) >= o.min_lr_frac * o.lr);
    }
}
