use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::model::{lm_forward_edge, lm_forward_full, lm_forward_ue, IntermediateTensor, LmParams};
use super::vocab::TokenSeq;
use crate::channel::{apply_channel, ChannelParams};
use crate::error::{Error, Result};
use crate::mathcore::RngStream;

/// Floor applied to next-token probabilities before taking logs.
pub const MIN_PROB: f64 = 1e-12;

/// Monte Carlo perplexity under a stochastic channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PplEstimate {
    pub ppl: f64,
    /// Standard error of `ppl` by the delta method over sequence-trials.
    pub stderr: f64,
    pub mean_nll: f64,
    /// Number of scored predictions (per trial).
    pub tokens: usize,
    /// Predictions whose probability fell below [`MIN_PROB`].
    pub clamped: usize,
    /// Mean fraction of intermediate elements lost in the channel.
    pub loss_fraction: f64,
}

/// Summed negative log-likelihood of `tokens[1..]` given edge logits.
fn score(logits: &crate::mathcore::Matrix, tokens: &[u32]) -> (f64, usize, usize) {
    let floor = MIN_PROB.ln();
    let mut nll = 0.0;
    let mut clamped = 0;
    let n = tokens.len().saturating_sub(1);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let mut lp = row[tokens[i + 1] as usize] - lse;
        if !(lp >= floor) {
            lp = floor;
            clamped += 1;
        }
        nll -= lp;
    }
    (nll, n, clamped)
}

/// Perplexity at split `p` with every sequence's intermediate tensor sent
/// through `channel` once per trial.
pub fn perplexity(
    params: &LmParams,
    corpus: &[TokenSeq],
    p: usize,
    channel: &ChannelParams,
    rng: &mut RngStream,
    n_trials: usize,
) -> Result<PplEstimate> {
    params.config.check_split(p)?;
    let ue = corpus
        .iter()
        .map(|seq| lm_forward_ue(params, seq, p))
        .collect::<Result<Vec<_>>>()?;
    perplexity_from_ue(params, &ue, corpus, p, channel, rng, n_trials)
}

/// As [`perplexity`], reusing device-side outputs computed earlier;
/// `ue_outputs[i]` must be `lm_forward_ue(params, &corpus[i], p)`.
pub fn perplexity_from_ue(
    params: &LmParams,
    ue_outputs: &[IntermediateTensor],
    corpus: &[TokenSeq],
    p: usize,
    channel: &ChannelParams,
    rng: &mut RngStream,
    n_trials: usize,
) -> Result<PplEstimate> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput(
            "perplexity needs at least one sequence".into(),
        ));
    }
    if n_trials == 0 {
        return Err(Error::param("n_trials must be at least 1"));
    }
    if ue_outputs.len() != corpus.len() {
        return Err(Error::shape(
            "one device-side output is needed per sequence",
        ));
    }
    channel.validate()?;
    // one child stream per (trial, sequence) so results do not depend on
    // evaluation order
    let base = rng.next_u64();
    let mut total = 0.0;
    let mut tokens = 0;
    let mut clamped = 0;
    let mut lost = 0.0;
    let mut units = Vec::with_capacity(n_trials * corpus.len());
    for t in 0..n_trials {
        for (i, (y, seq)) in ue_outputs.iter().zip(corpus).enumerate() {
            let mut child = RngStream::new(base, (t * corpus.len() + i) as u64);
            let (received, stats) = apply_channel(y.matrix(), channel, &mut child)?;
            let logits = lm_forward_edge(params, &IntermediateTensor(received), p)?;
            let (nll, n, c) = score(&logits, seq);
            total += nll;
            if t == 0 {
                tokens += n;
            }
            clamped += c;
            lost += stats.loss_fraction;
            if n > 0 {
                units.push(nll / n as f64);
            }
        }
    }
    if tokens == 0 {
        return Err(Error::InvalidInput(
            "no sequence has a next token to score".into(),
        ));
    }
    let mean_nll = total / (tokens * n_trials) as f64;
    let ppl = mean_nll.exp();
    let k = units.len() as f64;
    let se_nll = if units.len() > 1 {
        let mu = units.iter().sum::<f64>() / k;
        (units.iter().map(|u| (u - mu) * (u - mu)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    Ok(PplEstimate {
        ppl,
        stderr: ppl * se_nll,
        mean_nll,
        tokens,
        clamped,
        loss_fraction: lost / (n_trials * corpus.len()) as f64,
    })
}

/// Perplexity of the unsplit model (no channel).
pub fn clean_perplexity(params: &LmParams, corpus: &[TokenSeq]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0;
    for seq in corpus {
        let (nll, n, _) = score(&lm_forward_full(params, seq)?, seq);
        total += nll;
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::InvalidInput(
            "no sequence has a next token to score".into(),
        ));
    }
    Ok((total / tokens as f64).exp())
}
