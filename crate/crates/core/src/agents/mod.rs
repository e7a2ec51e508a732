//! Split-point controllers: PPO with GAE, and the A2C, DQN and random
//! baselines it is compared against.

mod dqn;
mod ppo;
mod runlog;

pub use dqn::{
    argmax, dqn_update, epsilon_greedy, sync_target, DqnHyper, DqnMetrics, DqnTransition, Replay,
};
pub use ppo::{buffer_kl, clipped_term, compute_gae, normalize, RolloutBuffer, UpdateMetrics};
pub use runlog::{EpisodeRow, RunLog, StepRow};

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::environment::{Action, PerplexityModel, RewardSource, SplitEnv, State, Step};
use crate::error::{Error, Result};
use crate::mathcore::{Matrix, RngStream};
use crate::neuralnet::{AdamConfig, AdamState, HiddenActivation, Mlp, MlpSpec, OutputActivation};
use ppo::{actor_critic_update, ActorCritic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Ppo,
    A2c,
    Dqn,
    Random,
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppo" => Ok(AgentKind::Ppo),
            "a2c" => Ok(AgentKind::A2c),
            "dqn" => Ok(AgentKind::Dqn),
            "random" => Ok(AgentKind::Random),
            _ => Err(Error::param(format!("unknown agent {s:?}"))),
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AgentKind::Ppo => "ppo",
            AgentKind::A2c => "a2c",
            AgentKind::Dqn => "dqn",
            AgentKind::Random => "random",
        })
    }
}

/// PPO settings. The first seven fields follow the reference table; the
/// rest are conventional choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoHyper {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_clip: f64,
    pub n_step: usize,
    pub batch: usize,
    pub steps_per_episode: usize,
    pub xi_gae: f64,
    pub ppo_epochs: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
}

impl Default for PpoHyper {
    fn default() -> Self {
        PpoHyper {
            alpha: 3e-4,
            gamma: 0.99,
            epsilon_clip: 0.2,
            n_step: 400,
            batch: 100,
            steps_per_episode: 5,
            xi_gae: 0.95,
            ppo_epochs: 4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && (0.0..=1.0).contains(&self.xi_gae)
            && self.epsilon_clip > 0.0
            && self.n_step > 0
            && self.batch > 0
            && self.batch <= self.n_step
            && self.steps_per_episode > 0
            && self.ppo_epochs > 0
            && self.max_grad_norm > 0.0;
        if !ok {
            return Err(Error::param(format!(
                "invalid PPO hyperparameters {self:?}"
            )));
        }
        Ok(())
    }

    fn net_spec(&self, outputs: usize) -> MlpSpec {
        let mut sizes = vec![3];
        sizes.extend(&self.hidden);
        sizes.push(outputs);
        MlpSpec {
            layer_sizes: sizes,
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Identity,
        }
    }
}

pub(crate) fn log_softmax_row(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Action index and its log-probability under the policy's categorical
/// distribution.
pub fn policy_act(
    policy: &Mlp,
    obs: &[f64; 3],
    rng: &mut RngStream,
    mode: ActMode,
) -> Result<(usize, f64)> {
    let logits = policy.predict(&Matrix::row_vector(obs))?;
    let logp = log_softmax_row(logits.row(0));
    let a = match mode {
        ActMode::Greedy => argmax(&logp),
        ActMode::Sample => {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut pick = logp.len() - 1;
            for (i, l) in logp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        }
    };
    Ok((a, logp[a]))
}

/// Probabilities of every action.
pub fn policy_probs(policy: &Mlp, obs: &[f64; 3]) -> Result<Vec<f64>> {
    let logits = policy.predict(&Matrix::row_vector(obs))?;
    Ok(log_softmax_row(logits.row(0))
        .iter()
        .map(|l| l.exp())
        .collect())
}

/// What a trained agent keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgentPolicy {
    /// Categorical policy network (PPO, A2C); value net kept for resuming.
    Actor { policy: Mlp, value: Mlp },
    /// Q-network (DQN).
    Q { q: Mlp },
    /// Uniform over `n_actions`.
    Random { n_actions: usize },
}

impl AgentPolicy {
    pub fn act(&self, obs: &[f64; 3], rng: &mut RngStream, mode: ActMode) -> Result<usize> {
        match self {
            AgentPolicy::Actor { policy, .. } => Ok(policy_act(policy, obs, rng, mode)?.0),
            AgentPolicy::Q { q } => Ok(argmax(q.predict(&Matrix::row_vector(obs))?.row(0))),
            AgentPolicy::Random { n_actions } => Ok(rng.below(*n_actions)),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            AgentPolicy::Actor { policy, .. } => policy.spec().output_size(),
            AgentPolicy::Q { q } => q.spec().output_size(),
            AgentPolicy::Random { n_actions } => *n_actions,
        }
    }
}

/// Checkpoint: networks plus the hyperparameters they were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub kind: AgentKind,
    pub u: usize,
    pub hyper: PpoHyper,
    pub dqn: DqnHyper,
    pub policy: AgentPolicy,
}

/// Hooks into the training loop. One epoch is one round of `n_step`
/// environment steps (followed by an update for PPO and A2C).
pub trait TrainHooks<M> {
    fn reward_source(&mut self, _epoch: usize) -> RewardSource {
        RewardSource::True
    }

    fn on_step(&mut self, _epoch: usize, _step: &Step, _elapsed: Duration) {}

    fn after_epoch(
        &mut self,
        _epoch: usize,
        _env: &mut SplitEnv<M>,
        _log: &mut RunLog,
    ) -> Result<()> {
        Ok(())
    }
}

/// Hooks that always use one reward source.
pub struct FixedSource(pub RewardSource);

impl<M> TrainHooks<M> for FixedSource {
    fn reward_source(&mut self, _epoch: usize) -> RewardSource {
        self.0
    }
}

// The browser has no monotonic clock through `std`; step times read zero there.
#[cfg(not(target_arch = "wasm32"))]
fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = std::time::Instant::now();
    let v = f();
    (v, t0.elapsed())
}

#[cfg(target_arch = "wasm32")]
fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    (f(), Duration::ZERO)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedAgent {
    pub kind: AgentKind,
    pub policy: AgentPolicy,
    pub log: RunLog,
    pub updates: Vec<UpdateMetrics>,
}

struct Rollout<'a, M> {
    env: &'a mut SplitEnv<M>,
    log: &'a mut RunLog,
    obs: [f64; 3],
    episode: usize,
    episode_reward: f64,
    global_step: usize,
}

impl<M: PerplexityModel> Rollout<'_, M> {
    fn step(
        &mut self,
        action: usize,
        source: RewardSource,
        epoch: usize,
        hooks: &mut dyn TrainHooks<M>,
        rng: &mut RngStream,
    ) -> Result<Step> {
        let u = self.env.config().u;
        let (step, elapsed) = timed(|| self.env.step(Action::from_index(action, u), rng, source));
        let step = step?;
        hooks.on_step(epoch, &step, elapsed);
        self.log.steps.push(StepRow {
            step: self.global_step,
            episode: self.episode,
            reward: step.reward,
            ppl: step.info.ppl,
            cost: step.info.cost,
            p: step.state.p,
            sigma: step.state.sigma,
            m: step.state.m,
            loss_prob: step.state.loss_prob,
            source: step.info.source,
            policy_loss: None,
            value_loss: None,
            entropy: None,
            approx_kl: None,
        });
        self.global_step += 1;
        self.episode_reward += step.reward;
        if step.done {
            self.log.episodes.push(EpisodeRow {
                episode: self.episode,
                end_step: self.global_step,
                total_reward: self.episode_reward,
            });
            self.episode += 1;
            self.episode_reward = 0.0;
            let s = self.env.reset(rng);
            self.obs = self.env.observe(&s);
        } else {
            self.obs = self.env.observe(&step.state);
        }
        Ok(step)
    }
}

/// Trains an agent of `kind` for `total_steps` environment steps (rounded
/// up to whole epochs of `hyper.n_step`).
#[allow(clippy::too_many_arguments)]
pub fn train_agent<M: PerplexityModel>(
    kind: AgentKind,
    env: &mut SplitEnv<M>,
    hyper: &PpoHyper,
    dqn_hyper: &DqnHyper,
    total_steps: usize,
    rng: &mut RngStream,
    hooks: &mut dyn TrainHooks<M>,
    run_id: &str,
) -> Result<TrainedAgent> {
    hyper.validate()?;
    if hyper.steps_per_episode != env.config().steps_per_episode {
        return Err(Error::param(format!(
            "hyperparameters expect {}-step episodes but the environment runs {}",
            hyper.steps_per_episode,
            env.config().steps_per_episode
        )));
    }
    let n_actions = env.n_actions();
    let epochs = total_steps.div_ceil(hyper.n_step);
    let mut log = RunLog::new(run_id, kind, rng.seed(), "");
    let mut init_rng = rng.derive("agents.init");
    let mut act_rng = rng.derive("agents.act");
    let mut env_rng = rng.derive("agents.env");
    let mut upd_rng = rng.derive("agents.update");

    let s0 = env.reset(&mut env_rng);
    let mut ro = Rollout {
        obs: env.observe(&s0),
        env,
        log: &mut log,
        episode: 0,
        episode_reward: 0.0,
        global_step: 0,
    };
    let mut updates = Vec::new();

    let policy = match kind {
        AgentKind::Ppo | AgentKind::A2c => {
            let mut policy = Mlp::init(hyper.net_spec(n_actions), &mut init_rng)?;
            let mut value = Mlp::init(hyper.net_spec(1), &mut init_rng)?;
            let mut popt = AdamState::new(&policy, AdamConfig::with_lr(hyper.alpha));
            let mut vopt = AdamState::new(&value, AdamConfig::with_lr(hyper.alpha));
            let mut buffer = RolloutBuffer::default();
            for epoch in 0..epochs {
                let source = hooks.reward_source(epoch);
                buffer.clear();
                for _ in 0..hyper.n_step {
                    let obs = ro.obs;
                    let (a, logp) = policy_act(&policy, &obs, &mut act_rng, ActMode::Sample)?;
                    let v = value.predict(&Matrix::row_vector(&obs))?.get(0, 0);
                    let step = ro.step(a, source, epoch, hooks, &mut env_rng)?;
                    buffer.push(obs, a, logp, step.reward, v, step.done);
                }
                buffer.last_value = value.predict(&Matrix::row_vector(&ro.obs))?.get(0, 0);
                let nets = ActorCritic {
                    policy: &mut policy,
                    value: &mut value,
                    policy_opt: &mut popt,
                    value_opt: &mut vopt,
                };
                let (metrics, _) = match kind {
                    AgentKind::Ppo => actor_critic_update(
                        nets,
                        &buffer,
                        hyper,
                        hyper.ppo_epochs,
                        Some(hyper.epsilon_clip),
                        &mut upd_rng,
                    )?,
                    _ => actor_critic_update(nets, &buffer, hyper, 1, None, &mut upd_rng)?,
                };
                if metrics.aborted {
                    log::warn!("update {epoch} aborted on a non-finite loss");
                }
                if let Some(row) = ro.log.steps.last_mut() {
                    row.policy_loss = Some(metrics.policy_loss);
                    row.value_loss = Some(metrics.value_loss);
                    row.entropy = Some(metrics.entropy);
                    row.approx_kl = Some(metrics.approx_kl);
                }
                updates.push(metrics);
                hooks.after_epoch(epoch, ro.env, ro.log)?;
            }
            AgentPolicy::Actor { policy, value }
        }
        AgentKind::Dqn => {
            let mut q = Mlp::init(hyper.net_spec(n_actions), &mut init_rng)?;
            let mut target = q.clone();
            let mut opt = AdamState::new(&q, AdamConfig::with_lr(hyper.alpha));
            let mut replay = Replay::new(dqn_hyper.replay_capacity);
            let total = epochs * hyper.n_step;
            for epoch in 0..epochs {
                let source = hooks.reward_source(epoch);
                let mut last = None;
                for _ in 0..hyper.n_step {
                    let obs = ro.obs;
                    let eps = dqn_hyper.epsilon(ro.global_step, total);
                    let qv = q.predict(&Matrix::row_vector(&obs))?;
                    let a = epsilon_greedy(qv.row(0), eps, &mut act_rng);
                    let step = ro.step(a, source, epoch, hooks, &mut env_rng)?;
                    let next_obs = ro.env.observe(&step.state);
                    replay.push(DqnTransition {
                        obs,
                        action: a,
                        reward: step.reward,
                        next_obs,
                        done: step.done,
                    });
                    if replay.len() >= dqn_hyper.learning_starts.max(dqn_hyper.batch) {
                        last = Some(dqn_update(
                            &mut q,
                            &target,
                            &mut opt,
                            &replay,
                            dqn_hyper.batch,
                            hyper.gamma,
                            hyper.max_grad_norm * 20.0,
                            &mut upd_rng,
                        )?);
                    }
                    if ro.global_step % dqn_hyper.target_sync == 0 {
                        sync_target(&mut target, &q);
                    }
                }
                if let (Some(m), Some(row)) = (last, ro.log.steps.last_mut()) {
                    row.value_loss = Some(m.td_loss);
                }
                hooks.after_epoch(epoch, ro.env, ro.log)?;
            }
            AgentPolicy::Q { q }
        }
        AgentKind::Random => {
            for epoch in 0..epochs {
                let source = hooks.reward_source(epoch);
                for _ in 0..hyper.n_step {
                    let a = act_rng.below(n_actions);
                    ro.step(a, source, epoch, hooks, &mut env_rng)?;
                }
                hooks.after_epoch(epoch, ro.env, ro.log)?;
            }
            AgentPolicy::Random { n_actions }
        }
    };
    Ok(TrainedAgent {
        kind,
        policy,
        log,
        updates,
    })
}

/// One finished evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub total_reward: f64,
    pub final_state: State,
    /// Noise level the agent observed when making its last move.
    pub decision_sigma: f64,
    pub mean_ppl: f64,
}

/// Runs `episodes` full episodes with a fixed policy.
pub fn evaluate_policy<M: PerplexityModel>(
    policy: &AgentPolicy,
    env: &mut SplitEnv<M>,
    episodes: usize,
    mode: ActMode,
    source: RewardSource,
    rng: &mut RngStream,
) -> Result<Vec<EpisodeSummary>> {
    let mut act_rng = rng.derive("eval.act");
    let mut env_rng = rng.derive("eval.env");
    let u = env.config().u;
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.reset(&mut env_rng);
        let mut total = 0.0;
        let mut ppl = 0.0;
        let mut n = 0;
        let mut decision_sigma;
        loop {
            decision_sigma = s.sigma;
            let a = policy.act(&env.observe(&s), &mut act_rng, mode)?;
            let step = env.step(Action::from_index(a, u), &mut env_rng, source)?;
            total += step.reward;
            ppl += step.info.ppl;
            n += 1;
            s = step.state;
            if step.done {
                break;
            }
        }
        out.push(EpisodeSummary {
            total_reward: total,
            final_state: s,
            decision_sigma,
            mean_ppl: ppl / n as f64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{AnalyticPerplexity, CaseName, CaseSpec, EnvConfig};
    use crate::splitlm::LmConfig;

    fn lm() -> LmConfig {
        LmConfig {
            n_layers: 8,
            d_in: 8,
            d_mid: 8,
            heads: 2,
            d_ff: 16,
            vocab: 10,
        }
    }

    fn env(u: usize) -> SplitEnv<AnalyticPerplexity> {
        let cfg = EnvConfig {
            u,
            ..EnvConfig::for_case(CaseName::A, 7)
        };
        SplitEnv::new(AnalyticPerplexity::new(lm()), cfg).unwrap()
    }

    #[test]
    fn uniform_logits_give_uniform_policy() {
        let spec = PpoHyper::default().net_spec(5);
        let policy = Mlp::zeros(spec).unwrap();
        let probs = policy_probs(&policy, &[0.3, 0.1, 0.9]).unwrap();
        assert!(probs.iter().all(|p| (p - 0.2).abs() < 1e-12));
        let mut rng = RngStream::new(0, 0);
        let (a, lp) = policy_act(&policy, &[0.0; 3], &mut rng, ActMode::Greedy).unwrap();
        assert_eq!(a, 0);
        assert!((lp - 0.2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn action_set_size() {
        for u in 1..=3 {
            let e = env(u);
            assert_eq!(e.n_actions(), 2 * u + 1);
            let deltas: Vec<i32> = (0..e.n_actions())
                .map(|i| Action::from_index(i, u).delta)
                .collect();
            assert_eq!(deltas.first(), Some(&-(u as i32)));
            assert_eq!(deltas.last(), Some(&(u as i32)));
        }
    }

    #[test]
    fn rollout_shape_and_determinism() {
        let hyper = PpoHyper::default();
        let run = |seed| {
            let mut e = env(1);
            train_agent(
                AgentKind::Ppo,
                &mut e,
                &hyper,
                &DqnHyper::default(),
                800,
                &mut RngStream::new(seed, 0),
                &mut FixedSource(RewardSource::True),
                "t",
            )
            .unwrap()
        };
        let a = run(3);
        assert_eq!(a.log.steps.len(), 800);
        assert_eq!(a.log.episodes.len(), 160);
        assert_eq!(a.updates.len(), 2);
        assert_eq!(a, run(3));
    }

    #[test]
    fn episode_steps_must_agree() {
        let hyper = PpoHyper {
            steps_per_episode: 4,
            ..Default::default()
        };
        let mut e = env(1);
        let r = train_agent(
            AgentKind::Random,
            &mut e,
            &hyper,
            &DqnHyper::default(),
            10,
            &mut RngStream::new(0, 0),
            &mut FixedSource(RewardSource::True),
            "t",
        );
        assert!(r.is_err());
    }

    #[test]
    fn every_kind_runs() {
        for kind in [AgentKind::A2c, AgentKind::Dqn, AgentKind::Random] {
            let mut e = env(2);
            let out = train_agent(
                kind,
                &mut e,
                &PpoHyper::default(),
                &DqnHyper::default(),
                400,
                &mut RngStream::new(1, 0),
                &mut FixedSource(RewardSource::True),
                "t",
            )
            .unwrap();
            assert_eq!(out.log.steps.len(), 400);
            assert_eq!(out.policy.n_actions(), 5);
            let mut rng = RngStream::new(5, 0);
            let ev = evaluate_policy(
                &out.policy,
                &mut e,
                3,
                ActMode::Greedy,
                RewardSource::True,
                &mut rng,
            )
            .unwrap();
            assert_eq!(ev.len(), 3);
        }
    }

    #[test]
    fn frozen_case_spec_roundtrip() {
        let c = CaseSpec::preset(CaseName::L, 7);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<CaseSpec>(&text).unwrap(), c);
    }
}
