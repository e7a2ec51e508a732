use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AgentKind;
use crate::environment::RewardSource;
use crate::error::Result;
use crate::surrogate::csv_err;

/// One environment step of a training run. Update metrics are filled on
/// the last step of each update round and left empty elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub episode: usize,
    pub reward: f64,
    pub ppl: f64,
    pub cost: u64,
    pub p: usize,
    pub sigma: f64,
    pub m: f64,
    pub loss_prob: f64,
    pub source: RewardSource,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub approx_kl: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub end_step: usize,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub run_id: String,
    pub agent: AgentKind,
    pub seed: u64,
    pub config_hash: String,
    pub steps: Vec<StepRow>,
    pub episodes: Vec<EpisodeRow>,
    /// Update round after which rewards came from the surrogate.
    pub switch_epoch: Option<usize>,
}

impl RunLog {
    pub fn new(
        run_id: impl Into<String>,
        agent: AgentKind,
        seed: u64,
        config_hash: impl Into<String>,
    ) -> Self {
        RunLog {
            run_id: run_id.into(),
            agent,
            seed,
            config_hash: config_hash.into(),
            steps: Vec::new(),
            episodes: Vec::new(),
            switch_epoch: None,
        }
    }

    /// Mean episode return over the last `n` episodes.
    pub fn final_mean_reward(&self, n: usize) -> f64 {
        let tail = &self.episodes[self.episodes.len().saturating_sub(n)..];
        tail.iter().map(|e| e.total_reward).sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn write_steps_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for row in &self.steps {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_steps_csv(path: &Path) -> Result<Vec<StepRow>> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        r.deserialize().map(|row| row.map_err(csv_err)).collect()
    }

    pub fn write_episodes_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for row in &self.episodes {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_episodes_csv(path: &Path) -> Result<Vec<EpisodeRow>> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        r.deserialize().map(|row| row.map_err(csv_err)).collect()
    }
}
