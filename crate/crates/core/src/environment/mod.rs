//! The split-point MDP: state `(σ, m, p)`, actions that move the split by up
//! to `u` layers, and a reward trading perplexity against device compute.

mod case;
mod model;

pub use case::{CaseName, CaseSpec};
pub use model::{AnalyticPerplexity, LmPerplexity, PerplexityModel};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, LossCalibration};
use crate::error::{Error, Result};
use crate::mathcore::RngStream;
use crate::surrogate::SurrogateModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostNormalizer {
    /// Raw FLOPs.
    Raw,
    /// FLOPs divided by the cost at the largest split.
    UnitInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda: f64,
    pub cost_normalizer: CostNormalizer,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda: 1.0,
            cost_normalizer: CostNormalizer::UnitInterval,
        }
    }
}

/// How the channel evolves between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelDynamics {
    /// Fresh uniform draw every step.
    #[default]
    Iid,
    /// Bounded random walk moving each parameter by at most 10% of its range.
    RandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardSource {
    True,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub case: CaseSpec,
    pub sigma_range: (f64, f64),
    pub omega: f64,
    pub h_th: f64,
    /// Largest split move per action.
    pub u: usize,
    pub steps_per_episode: usize,
    pub reward: RewardWeights,
    /// PPL entering the reward is capped at this multiple of the vocabulary
    /// size.
    pub ppl_clamp_factor: f64,
    pub dynamics: ChannelDynamics,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            case: CaseSpec::preset(CaseName::A, 7),
            sigma_range: (0.01, 0.5),
            omega: 1.0,
            h_th: 0.5,
            u: 1,
            steps_per_episode: 5,
            reward: RewardWeights::default(),
            ppl_clamp_factor: 10.0,
            dynamics: ChannelDynamics::Iid,
        }
    }
}

impl EnvConfig {
    pub fn for_case(name: CaseName, max_split: usize) -> Self {
        EnvConfig {
            case: CaseSpec::preset(name, max_split),
            ..Default::default()
        }
    }

    pub fn n_actions(&self) -> usize {
        2 * self.u + 1
    }

    pub fn validate(&self, max_split: usize) -> Result<()> {
        self.case.validate(max_split)?;
        let (lo, hi) = self.sigma_range;
        if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
            return Err(Error::param(format!(
                "sigma range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if self.u == 0 || self.steps_per_episode == 0 {
            return Err(Error::param("u and steps_per_episode must be positive"));
        }
        if !(self.reward.lambda >= 0.0 && self.reward.lambda.is_finite()) {
            return Err(Error::param(format!(
                "lambda must be finite and >= 0, got {}",
                self.reward.lambda
            )));
        }
        if !(self.ppl_clamp_factor > 0.0) {
            return Err(Error::param("ppl_clamp_factor must be positive"));
        }
        ChannelParams::nakagami(1.0, self.omega, 0.0, self.h_th).validate()
    }
}

/// MDP state. `loss_prob` is the nominal packet-loss probability the shape
/// `m` was calibrated from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub sigma: f64,
    pub m: f64,
    pub p: usize,
    pub loss_prob: f64,
}

/// Split move in layers, within `[-u, u]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub delta: i32,
}

impl Action {
    /// Maps action index `0..2u+1` to `delta = index - u`.
    pub fn from_index(index: usize, u: usize) -> Self {
        Action {
            delta: index as i32 - u as i32,
        }
    }

    pub fn index(&self, u: usize) -> usize {
        (self.delta + u as i32) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// PPL before the reward clamp (the surrogate prediction when the
    /// surrogate supplied the reward).
    pub ppl: f64,
    pub ppl_stderr: f64,
    /// Raw device FLOPs.
    pub cost: u64,
    /// Cost term as it entered the reward, before the λ weight.
    pub cost_term: f64,
    pub loss_prob: f64,
    /// The requested move hit the `[1, L-1]` boundary.
    pub clamped: bool,
    pub source: RewardSource,
    /// Surrogate input left its training hull.
    pub extrapolating: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: State,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One environment instance. The language model (or its stand-in) is
/// borrowed through [`PerplexityModel`].
pub struct SplitEnv<M> {
    config: EnvConfig,
    model: M,
    calibration: LossCalibration,
    surrogate: Option<SurrogateModel>,
    state: State,
    t: usize,
    lm_calls: u64,
    max_cost: u64,
}

impl<M: PerplexityModel> SplitEnv<M> {
    pub fn new(model: M, config: EnvConfig) -> Result<Self> {
        let max_split = model.max_split();
        config.validate(max_split)?;
        let (lo, hi) = config.case.loss_range;
        let calibration = LossCalibration::new(config.omega, config.h_th, lo, hi, 33)?;
        let max_cost = model.flops(max_split)?;
        let state = State {
            sigma: config.sigma_range.0,
            m: calibration.m_for(lo),
            p: config.case.init_p_range.0,
            loss_prob: lo,
        };
        Ok(SplitEnv {
            config,
            model,
            calibration,
            surrogate: None,
            state,
            t: 0,
            lm_calls: 0,
            max_cost,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn max_split(&self) -> usize {
        self.model.max_split()
    }

    pub fn n_actions(&self) -> usize {
        self.config.n_actions()
    }

    /// Number of reward evaluations that ran the language model.
    pub fn lm_calls(&self) -> u64 {
        self.lm_calls
    }

    pub fn surrogate(&self) -> Option<&SurrogateModel> {
        self.surrogate.as_ref()
    }

    pub fn set_surrogate(&mut self, surrogate: Option<SurrogateModel>) {
        self.surrogate = surrogate;
    }

    pub fn calibration(&self) -> &LossCalibration {
        &self.calibration
    }

    /// Network input: σ and `ln m` scaled to `[0, 1]` by their ranges, `p`
    /// divided by `L - 1`.
    pub fn observe(&self, s: &State) -> [f64; 3] {
        let (slo, shi) = self.config.sigma_range;
        let sigma = if shi > slo {
            (s.sigma - slo) / (shi - slo)
        } else {
            0.0
        };
        let (mlo, mhi) = self.calibration.m_range();
        let m = if mhi > mlo {
            (s.m.ln() - mlo.ln()) / (mhi.ln() - mlo.ln())
        } else {
            0.0
        };
        [sigma, m, s.p as f64 / self.max_split() as f64]
    }

    pub fn channel_for(&self, s: &State) -> ChannelParams {
        ChannelParams::nakagami(s.m, self.config.omega, s.sigma, self.config.h_th)
    }

    fn draw_channel(&self, rng: &mut RngStream, prev: Option<&State>) -> (f64, f64, f64) {
        let (slo, shi) = self.config.sigma_range;
        let (llo, lhi) = self.config.case.loss_range;
        let (sigma, loss) = match (self.config.dynamics, prev) {
            (ChannelDynamics::RandomWalk, Some(s)) => (
                (s.sigma + 0.1 * (shi - slo) * rng.uniform_range(-1.0, 1.0)).clamp(slo, shi),
                (s.loss_prob + 0.1 * (lhi - llo) * rng.uniform_range(-1.0, 1.0)).clamp(llo, lhi),
            ),
            _ => (rng.uniform_range(slo, shi), rng.uniform_range(llo, lhi)),
        };
        (sigma, self.calibration.m_for(loss), loss)
    }

    pub fn reset(&mut self, rng: &mut RngStream) -> State {
        let (lo, hi) = self.config.case.init_p_range;
        let p = rng.int_inclusive(lo, hi);
        let (sigma, m, loss_prob) = self.draw_channel(rng, None);
        self.state = State {
            sigma,
            m,
            p,
            loss_prob,
        };
        self.t = 0;
        self.state
    }

    fn cost_term(&self, p: usize) -> Result<(u64, f64)> {
        let cost = self.model.flops(p)?;
        let term = match self.config.reward.cost_normalizer {
            CostNormalizer::Raw => cost as f64,
            CostNormalizer::UnitInterval => cost as f64 / self.max_cost as f64,
        };
        Ok((cost, term))
    }

    fn ppl_cap(&self) -> f64 {
        self.config.ppl_clamp_factor * self.model.vocab_size() as f64
    }

    /// `-(PPL + λ·C̃)` at `s`, with PPL measured by running the model through
    /// the channel.
    pub fn reward_true(&mut self, s: &State, rng: &mut RngStream) -> Result<(f64, StepInfo)> {
        let est = self.model.evaluate(s.p, &self.channel_for(s), rng)?;
        self.lm_calls += 1;
        let (cost, cost_term) = self.cost_term(s.p)?;
        let reward = -(est.ppl.min(self.ppl_cap()) + self.config.reward.lambda * cost_term);
        Ok((
            reward,
            StepInfo {
                ppl: est.ppl,
                ppl_stderr: est.stderr,
                cost,
                cost_term,
                loss_prob: s.loss_prob,
                clamped: false,
                source: RewardSource::True,
                extrapolating: false,
            },
        ))
    }

    /// As [`reward_true`](Self::reward_true) with the surrogate's PPL
    /// estimate; never touches the language model.
    pub fn reward_surrogate(&self, s: &State) -> Result<(f64, StepInfo)> {
        let sur = self.surrogate.as_ref().ok_or(Error::UnavailableSurrogate)?;
        let (ppl, extrapolating) = sur.predict(s.p, s.sigma, s.m);
        let (cost, cost_term) = self.cost_term(s.p)?;
        let reward = -(ppl.min(self.ppl_cap()) + self.config.reward.lambda * cost_term);
        Ok((
            reward,
            StepInfo {
                ppl,
                ppl_stderr: 0.0,
                cost,
                cost_term,
                loss_prob: s.loss_prob,
                clamped: false,
                source: RewardSource::Surrogate,
                extrapolating,
            },
        ))
    }

    /// Applies `action`, redraws the channel and scores the new state.
    pub fn step(
        &mut self,
        action: Action,
        rng: &mut RngStream,
        source: RewardSource,
    ) -> Result<Step> {
        let u = self.config.u as i32;
        if action.delta.abs() > u {
            return Err(Error::param(format!(
                "action {} outside [-{u}, {u}]",
                action.delta
            )));
        }
        if source == RewardSource::Surrogate && self.surrogate.is_none() {
            return Err(Error::UnavailableSurrogate);
        }
        let target = self.state.p as i64 + action.delta as i64;
        let p = target.clamp(1, self.max_split() as i64) as usize;
        let (sigma, m, loss_prob) = self.draw_channel(rng, Some(&self.state));
        let next = State {
            sigma,
            m,
            p,
            loss_prob,
        };
        let (reward, mut info) = match source {
            RewardSource::True => self.reward_true(&next, rng)?,
            RewardSource::Surrogate => self.reward_surrogate(&next)?,
        };
        info.clamped = target != p as i64;
        self.state = next;
        self.t += 1;
        Ok(Step {
            state: next,
            reward,
            done: self.t >= self.config.steps_per_episode,
            info,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitlm::LmConfig;

    fn cfg() -> LmConfig {
        LmConfig {
            n_layers: 8,
            d_in: 16,
            d_mid: 16,
            heads: 4,
            d_ff: 32,
            vocab: 20,
        }
    }

    fn frozen(p: usize, loss: f64, sigma: f64) -> EnvConfig {
        EnvConfig {
            case: CaseSpec {
                name: CaseName::L,
                loss_range: (loss, loss),
                init_p_range: (p, p),
            },
            sigma_range: (sigma, sigma),
            ..Default::default()
        }
    }

    #[test]
    fn degenerate_case_resets_deterministically() {
        let mut env = SplitEnv::new(AnalyticPerplexity::new(cfg()), frozen(3, 0.05, 0.1)).unwrap();
        let s = env.reset(&mut RngStream::new(0, 0));
        assert_eq!(s.p, 3);
        assert_eq!(s.sigma, 0.1);
        let want = crate::channel::calibrate_m(0.05, 1.0, 0.5).unwrap();
        assert!((s.m - want).abs() < 1e-9 * want);
    }

    #[test]
    fn clamps_at_boundaries() {
        let mut env = SplitEnv::new(AnalyticPerplexity::new(cfg()), frozen(1, 0.05, 0.1)).unwrap();
        let mut rng = RngStream::new(1, 0);
        env.reset(&mut rng);
        let step = env
            .step(Action { delta: -1 }, &mut rng, RewardSource::True)
            .unwrap();
        assert_eq!(step.state.p, 1);
        assert!(step.info.clamped);
        let step = env
            .step(Action { delta: 0 }, &mut rng, RewardSource::True)
            .unwrap();
        assert_eq!(step.state.p, 1);
        assert!(!step.info.clamped);
        assert!(env
            .step(Action { delta: 2 }, &mut rng, RewardSource::True)
            .is_err());
    }

    #[test]
    fn episode_length() {
        let mut env = SplitEnv::new(AnalyticPerplexity::new(cfg()), EnvConfig::default()).unwrap();
        let mut rng = RngStream::new(2, 0);
        env.reset(&mut rng);
        let dones: Vec<bool> = (0..5)
            .map(|_| {
                env.step(Action { delta: 1 }, &mut rng, RewardSource::True)
                    .unwrap()
                    .done
            })
            .collect();
        assert_eq!(dones, vec![false, false, false, false, true]);
    }

    #[test]
    fn surrogate_source_needs_a_surrogate() {
        let mut env = SplitEnv::new(AnalyticPerplexity::new(cfg()), EnvConfig::default()).unwrap();
        let mut rng = RngStream::new(2, 0);
        env.reset(&mut rng);
        assert!(matches!(
            env.step(Action { delta: 0 }, &mut rng, RewardSource::Surrogate),
            Err(Error::UnavailableSurrogate)
        ));
    }

    #[test]
    fn unit_cost_endpoint_and_lambda_order() {
        let mut env = SplitEnv::new(AnalyticPerplexity::new(cfg()), frozen(7, 0.1, 0.2)).unwrap();
        let mut rng = RngStream::new(3, 0);
        let s = env.reset(&mut rng);
        let (r1, info) = env.reward_true(&s, &mut rng).unwrap();
        assert_eq!(info.cost_term, 1.0);
        assert!((r1 + info.ppl + 1.0).abs() < 1e-12);
        env.config.reward.lambda = 2.0;
        let (r2, _) = env.reward_true(&s, &mut rng).unwrap();
        assert!(r2 <= r1);
        assert_eq!(env.lm_calls(), 2);
    }

    #[test]
    fn observation_is_scaled() {
        let env = SplitEnv::new(AnalyticPerplexity::new(cfg()), EnvConfig::default()).unwrap();
        let (mlo, mhi) = env.calibration().m_range();
        let lo = env.observe(&State {
            sigma: 0.01,
            m: mlo,
            p: 7,
            loss_prob: 0.3,
        });
        let hi = env.observe(&State {
            sigma: 0.5,
            m: mhi,
            p: 7,
            loss_prob: 0.0,
        });
        assert_eq!(lo, [0.0, 0.0, 1.0]);
        assert!((hi[0] - 1.0).abs() < 1e-12 && (hi[1] - 1.0).abs() < 1e-12);
    }
}
