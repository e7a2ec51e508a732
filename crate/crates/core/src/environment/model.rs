use std::sync::Arc;

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::mathcore::{gaussian_sample, RngStream};
use crate::splitlm::{
    activations_by_layer, c_ue, perplexity_from_ue, IntermediateTensor, LmConfig, LmParams,
    PplEstimate, TokenSeq,
};

/// Anything that can score a split point under a channel. The environment
/// only sees the model through this trait.
pub trait PerplexityModel {
    fn config(&self) -> &LmConfig;

    fn max_split(&self) -> usize {
        self.config().max_split()
    }

    fn vocab_size(&self) -> usize {
        self.config().vocab
    }

    /// Device-side FLOPs at split `p`.
    fn flops(&self, p: usize) -> Result<u64> {
        c_ue(self.config(), p)
    }

    fn evaluate(
        &self,
        p: usize,
        channel: &ChannelParams,
        rng: &mut RngStream,
    ) -> Result<PplEstimate>;
}

/// The trained transformer scored on a fixed random sample of sequences.
///
/// Device-side activations for every split point are computed once, so a
/// reward only costs the channel draw and the edge half.
#[derive(Debug, Clone)]
pub struct LmPerplexity {
    params: Arc<LmParams>,
    sample: Vec<TokenSeq>,
    // ue[p - 1][i]: device output of sample i at split p
    ue: Vec<Vec<IntermediateTensor>>,
    n_trials: usize,
}

impl LmPerplexity {
    pub fn new(
        params: Arc<LmParams>,
        pool: &[TokenSeq],
        n_seqs: usize,
        n_trials: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if pool.is_empty() || n_seqs == 0 || n_trials == 0 {
            return Err(Error::param(
                "perplexity sample needs sequences and at least one trial",
            ));
        }
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        rng.shuffle(&mut idx);
        idx.truncate(n_seqs.min(pool.len()));
        let sample: Vec<TokenSeq> = idx.iter().map(|&i| pool[i].clone()).collect();
        let max_split = params.config.max_split();
        let mut ue = vec![Vec::with_capacity(sample.len()); max_split];
        for seq in &sample {
            for (p, act) in activations_by_layer(&params, seq)?.into_iter().enumerate() {
                ue[p].push(act);
            }
        }
        Ok(LmPerplexity {
            params,
            sample,
            ue,
            n_trials,
        })
    }

    pub fn sample(&self) -> &[TokenSeq] {
        &self.sample
    }

    pub fn params(&self) -> &LmParams {
        &self.params
    }

    pub fn n_trials(&self) -> usize {
        self.n_trials
    }
}

impl PerplexityModel for LmPerplexity {
    fn config(&self) -> &LmConfig {
        &self.params.config
    }

    fn evaluate(
        &self,
        p: usize,
        channel: &ChannelParams,
        rng: &mut RngStream,
    ) -> Result<PplEstimate> {
        self.params.config.check_split(p)?;
        perplexity_from_ue(
            &self.params,
            &self.ue[p - 1],
            &self.sample,
            p,
            channel,
            rng,
            self.n_trials,
        )
    }
}

/// Closed-form stand-in for the language model, for tests and demos that
/// need a cheap environment with known structure:
///
/// `ppl = base + loss_weight · P_loss · (1 + depth) + noise_weight · σ · (1 + depth) + ε`
///
/// where `depth = (max_split - p) / max_split` grows as the split moves
/// toward the input and `ε ~ N(0, jitter²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticPerplexity {
    pub config: LmConfig,
    pub base: f64,
    pub loss_weight: f64,
    pub noise_weight: f64,
    pub jitter: f64,
}

impl AnalyticPerplexity {
    pub fn new(config: LmConfig) -> Self {
        AnalyticPerplexity {
            config,
            base: 10.0,
            loss_weight: 20.0,
            noise_weight: 10.0,
            jitter: 0.0,
        }
    }

    /// Noise-free value of the closed form.
    pub fn mean_ppl(&self, p: usize, channel: &ChannelParams) -> Result<f64> {
        self.config.check_split(p)?;
        let max = self.config.max_split() as f64;
        let depth = (max - p as f64) / max;
        let loss = channel.loss_probability()?;
        Ok(self.base
            + (self.loss_weight * loss + self.noise_weight * channel.sigma) * (1.0 + depth))
    }
}

impl PerplexityModel for AnalyticPerplexity {
    fn config(&self) -> &LmConfig {
        &self.config
    }

    fn evaluate(
        &self,
        p: usize,
        channel: &ChannelParams,
        rng: &mut RngStream,
    ) -> Result<PplEstimate> {
        let mean = self.mean_ppl(p, channel)?;
        let ppl = gaussian_sample(rng, mean, self.jitter)?.max(1.0);
        Ok(PplEstimate {
            ppl,
            stderr: self.jitter,
            mean_nll: ppl.ln(),
            tokens: 0,
            clamped: 0,
            loss_fraction: 0.0,
        })
    }
}
