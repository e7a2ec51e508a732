use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{fit_surrogate, CvReport, SurrogateModel, SurrogateRecord, SurrogateSpec};
use crate::agents::{train_agent, AgentKind, DqnHyper, PpoHyper, RunLog, TrainHooks, TrainedAgent};
use crate::environment::{PerplexityModel, RewardSource, SplitEnv, Step};
use crate::error::{Error, Result};
use crate::mathcore::RngStream;

/// Surrogate-assisted PPO: true rewards until enough records exist and the
/// fitted surrogate passes cross-validation, surrogate rewards afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Algorithm1Config {
    pub ppo: PpoHyper,
    pub total_steps: usize,
    /// True-reward records required before the first fit.
    pub min_records: usize,
    pub surrogate: SurrogateSpec,
    pub cv_folds: usize,
    /// Largest accepted `mean CV MSE / target variance`.
    pub max_normalized_mse: f64,
    /// Update rounds between refits after a rejected fit.
    pub retry_every: usize,
}

impl Default for Algorithm1Config {
    fn default() -> Self {
        Algorithm1Config {
            ppo: PpoHyper::default(),
            total_steps: 24_000,
            min_records: 2_000,
            surrogate: SurrogateSpec::default(),
            cv_folds: 5,
            max_normalized_mse: 0.25,
            retry_every: 5,
        }
    }
}

impl Algorithm1Config {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.min_records < 10 * self.cv_folds || self.cv_folds < 2 {
            return Err(Error::param(format!(
                "min_records {} must cover {}-fold cross-validation",
                self.min_records, self.cv_folds
            )));
        }
        if !(self.max_normalized_mse > 0.0) || self.retry_every == 0 {
            return Err(Error::param(
                "max_normalized_mse and retry_every must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Algorithm1Outcome {
    pub agent: TrainedAgent,
    /// Accepted surrogate, if any fit passed the gate.
    pub surrogate: Option<SurrogateModel>,
    /// Reports of every fit attempted, in order.
    pub cv_reports: Vec<CvReport>,
    pub records: Vec<SurrogateRecord>,
    /// Last true-reward update round.
    pub switch_epoch: Option<usize>,
    pub lm_calls_at_switch: Option<u64>,
    pub lm_calls_end: u64,
    /// Mean wall time of one environment step, by reward source.
    pub mean_step_true: Option<Duration>,
    pub mean_step_surrogate: Option<Duration>,
}

struct Hooks {
    cfg: Algorithm1Config,
    cap: f64,
    rng: RngStream,
    records: Vec<SurrogateRecord>,
    switched: bool,
    last_attempt: Option<usize>,
    reports: Vec<CvReport>,
    accepted: Option<SurrogateModel>,
    switch_epoch: Option<usize>,
    lm_calls_at_switch: Option<u64>,
    time_true: (Duration, u32),
    time_sur: (Duration, u32),
}

impl<M: PerplexityModel> TrainHooks<M> for Hooks {
    fn reward_source(&mut self, _epoch: usize) -> RewardSource {
        if self.switched {
            RewardSource::Surrogate
        } else {
            RewardSource::True
        }
    }

    fn on_step(&mut self, _epoch: usize, step: &Step, elapsed: Duration) {
        match step.info.source {
            RewardSource::True => {
                self.records.push(SurrogateRecord {
                    p: step.state.p,
                    sigma: step.state.sigma,
                    m: step.state.m,
                    ppl: step.info.ppl.min(self.cap),
                });
                self.time_true.0 += elapsed;
                self.time_true.1 += 1;
            }
            RewardSource::Surrogate => {
                self.time_sur.0 += elapsed;
                self.time_sur.1 += 1;
            }
        }
    }

    fn after_epoch(&mut self, epoch: usize, env: &mut SplitEnv<M>, log: &mut RunLog) -> Result<()> {
        if self.switched || self.records.len() < self.cfg.min_records {
            return Ok(());
        }
        if let Some(last) = self.last_attempt {
            if epoch < last + self.cfg.retry_every {
                return Ok(());
            }
        }
        self.last_attempt = Some(epoch);
        let mut rng = self.rng.substream(epoch as u64);
        let (model, report) = fit_surrogate(
            &self.records,
            &self.cfg.surrogate,
            self.cfg.cv_folds,
            &mut rng,
        )?;
        let ok = report.normalized_mse <= self.cfg.max_normalized_mse;
        log::info!(
            "surrogate fit after round {epoch}: {} records, normalized CV MSE {:.4} ({})",
            self.records.len(),
            report.normalized_mse,
            if ok { "accepted" } else { "rejected" }
        );
        self.reports.push(report);
        if ok {
            env.set_surrogate(Some(model.clone()));
            self.accepted = Some(model);
            self.switched = true;
            self.switch_epoch = Some(epoch);
            self.lm_calls_at_switch = Some(env.lm_calls());
            log.switch_epoch = Some(epoch);
        }
        Ok(())
    }
}

fn mean(t: (Duration, u32)) -> Option<Duration> {
    (t.1 > 0).then(|| t.0 / t.1)
}

/// Runs surrogate-assisted PPO on `env` for `cfg.total_steps` steps.
pub fn algorithm1_train<M: PerplexityModel>(
    env: &mut SplitEnv<M>,
    cfg: &Algorithm1Config,
    rng: &mut RngStream,
    run_id: &str,
) -> Result<Algorithm1Outcome> {
    cfg.validate()?;
    let mut hooks = Hooks {
        cfg: cfg.clone(),
        cap: env.config().ppl_clamp_factor * env.model().vocab_size() as f64,
        rng: rng.derive("algorithm1.surrogate"),
        records: Vec::new(),
        switched: false,
        last_attempt: None,
        reports: Vec::new(),
        accepted: None,
        switch_epoch: None,
        lm_calls_at_switch: None,
        time_true: (Duration::ZERO, 0),
        time_sur: (Duration::ZERO, 0),
    };
    env.set_surrogate(None);
    let agent = train_agent(
        AgentKind::Ppo,
        env,
        &cfg.ppo,
        &DqnHyper::default(),
        cfg.total_steps,
        &mut rng.derive("algorithm1.agent"),
        &mut hooks,
        run_id,
    )?;
    Ok(Algorithm1Outcome {
        agent,
        surrogate: hooks.accepted,
        cv_reports: hooks.reports,
        records: hooks.records,
        switch_epoch: hooks.switch_epoch,
        lm_calls_at_switch: hooks.lm_calls_at_switch,
        lm_calls_end: env.lm_calls(),
        mean_step_true: mean(hooks.time_true),
        mean_step_surrogate: mean(hooks.time_sur),
    })
}
