use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use splitedge::agents::{AgentKind, DqnHyper, PpoHyper};
use splitedge::analysis::RewardReport;
use splitedge::environment::{CaseName, CaseSpec, EnvConfig};
use splitedge::splitlm::{LmConfig, TrainLmOptions};
use splitedge::surrogate::{Algorithm1Config, SurrogateSpec};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmSection {
    /// Layer shape; `vocab` is replaced by the corpus vocabulary size.
    pub shape: LmConfig,
    pub train: TrainLmOptions,
}

/// Which held-out windows score a reward, and how many channel draws each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSample {
    pub n_seqs: usize,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSection {
    pub kind: AgentKind,
    pub total_steps: usize,
    pub ppo: PpoHyper,
    pub dqn: DqnHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSection {
    /// Records gathered by `collect`.
    pub collect_n: usize,
    pub spec: SurrogateSpec,
    pub cv_folds: usize,
    /// Surrogate-assisted training: true-reward records required before the first fit.
    pub min_records: usize,
    /// Surrogate-assisted training: largest accepted normalized CV MSE.
    pub max_normalized_mse: f64,
    pub retry_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    pub lm: LmSection,
    pub reward_sample: RewardSample,
    /// Scenario preset; overrides `env.case`.
    pub case: CaseName,
    pub env: EnvConfig,
    pub agent: AgentSection,
    pub surrogate: SurrogateSection,
    pub eval: EvalSection,
    /// Affine transform applied to rewards in evaluation and analysis
    /// outputs.
    pub report: RewardReport,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let shape = LmConfig {
            n_layers: 8,
            d_in: 32,
            d_mid: 32,
            heads: 4,
            d_ff: 128,
            vocab: 0,
        };
        let a1 = Algorithm1Config::default();
        ExperimentConfig {
            seed: 0,
            corpus: PathBuf::from("data/moby_dick.txt"),
            out_dir: PathBuf::from("runs"),
            lm: LmSection {
                shape,
                train: TrainLmOptions::default(),
            },
            reward_sample: RewardSample {
                n_seqs: 8,
                n_trials: 2,
            },
            case: CaseName::A,
            env: EnvConfig::default(),
            agent: AgentSection {
                kind: AgentKind::Ppo,
                total_steps: 24_000,
                ppo: PpoHyper::default(),
                dqn: DqnHyper::default(),
            },
            surrogate: SurrogateSection {
                collect_n: 2_000,
                spec: a1.surrogate,
                cv_folds: a1.cv_folds,
                min_records: a1.min_records,
                max_normalized_mse: a1.max_normalized_mse,
                retry_every: a1.retry_every,
            },
            eval: EvalSection { episodes: 500 },
            report: RewardReport::default(),
        }
    }
}

/// Recursively overlays `patch` onto `base`. Objects merge key by key;
/// anything else replaces. Unknown keys are rejected.
fn merge(base: &mut Value, patch: Value, path: &str) -> Result<(), CliError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(CliError::Config(format!("unknown config key {sub}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// `a.b.c=value`; the value is parsed as JSON when possible, else taken as a
/// string.
fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut patch = value;
    for part in key.rsplit('.') {
        let mut m = serde_json::Map::new();
        m.insert(part.to_string(), patch);
        patch = Value::Object(m);
    }
    merge(root, patch, "")
}

impl ExperimentConfig {
    /// Defaults, overlaid by the JSON file (if any), then by dot-keyed
    /// overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut root = serde_json::to_value(Self::default()).expect("default config serializes");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Missing(format!("config {}: {e}", p.display())))?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?;
            merge(&mut root, patch, "")?;
        }
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let mut cfg: Self = serde_json::from_value(root).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.env.case = CaseSpec::preset(cfg.case, cfg.lm.shape.max_split());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let shape = LmConfig {
            vocab: self.lm.shape.vocab.max(2),
            ..self.lm.shape
        };
        shape.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.env
            .validate(shape.max_split())
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.agent.ppo.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.agent.ppo.steps_per_episode != self.env.steps_per_episode {
            return bad(format!(
                "agent.ppo.steps_per_episode ({}) must equal env.steps_per_episode ({})",
                self.agent.ppo.steps_per_episode, self.env.steps_per_episode
            ));
        }
        if self.reward_sample.n_seqs == 0 || self.reward_sample.n_trials == 0 {
            return bad("reward_sample needs at least one sequence and one trial".into());
        }
        if self.eval.episodes == 0 || self.agent.total_steps == 0 {
            return bad("eval.episodes and agent.total_steps must be positive".into());
        }
        self.algorithm1().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.report.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn algorithm1(&self) -> Algorithm1Config {
        Algorithm1Config {
            ppo: self.agent.ppo.clone(),
            total_steps: self.agent.total_steps,
            min_records: self.surrogate.min_records,
            surrogate: self.surrogate.spec.clone(),
            cv_folds: self.surrogate.cv_folds,
            max_normalized_mse: self.surrogate.max_normalized_mse,
            retry_every: self.surrogate.retry_every,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ExperimentConfig::load(None, &[]).unwrap();
        assert_eq!(c, {
            let mut d = ExperimentConfig::default();
            d.env.case = CaseSpec::preset(CaseName::A, 7);
            d
        });
    }

    #[test]
    fn dot_overrides() {
        let c = ExperimentConfig::load(
            None,
            &[
                "env.reward.lambda=0.5".into(),
                "case=H".into(),
                "agent.kind=dqn".into(),
                "out_dir=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.env.reward.lambda, 0.5);
        assert_eq!(c.env.case.loss_range, (0.1, 0.3));
        assert_eq!(c.agent.kind, AgentKind::Dqn);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        assert!(matches!(
            ExperimentConfig::load(None, &["env.lamda=1".into()]),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::load(None, &["env.reward.lambda=-1".into()]),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::load(None, &["noequals".into()]),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
