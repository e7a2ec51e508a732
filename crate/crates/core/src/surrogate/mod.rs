//! Learned stand-in for the perplexity term of the reward, and the training
//! loop that switches to it once enough true rewards have been seen.

mod algorithm1;
mod model;

pub use algorithm1::{algorithm1_train, Algorithm1Config, Algorithm1Outcome};
pub use model::{
    fit_surrogate, fold_assignment, train_surrogate, CvReport, SurrogateModel, SurrogateRecord,
    SurrogateSpec,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::{PerplexityModel, SplitEnv, State};
use crate::error::{Error, Result};
use crate::mathcore::RngStream;

/// Where in `(p, σ, m)` records are taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingPlan {
    /// Every combination of the listed values.
    Lattice {
        p: Vec<usize>,
        sigma: Vec<f64>,
        m: Vec<f64>,
    },
    /// `n` independent draws: `p` uniform over all splits, `σ` and the loss
    /// probability uniform over the environment's ranges.
    Random { n: usize },
}

/// Runs the environment's model at each planned point and records the
/// (clamped) PPL.
pub fn collect_records<M: PerplexityModel>(
    env: &mut SplitEnv<M>,
    plan: &SamplingPlan,
    rng: &mut RngStream,
) -> Result<Vec<SurrogateRecord>> {
    let cap = env.config().ppl_clamp_factor * env.model().vocab_size() as f64;
    let states: Vec<State> = match plan {
        SamplingPlan::Lattice { p, sigma, m } => {
            let mut out = Vec::with_capacity(p.len() * sigma.len() * m.len());
            for &pp in p {
                for &s in sigma {
                    for &mm in m {
                        let loss_prob = crate::channel::packet_loss_prob(
                            mm,
                            env.config().omega,
                            env.config().h_th,
                        )?;
                        out.push(State {
                            sigma: s,
                            m: mm,
                            p: pp,
                            loss_prob,
                        });
                    }
                }
            }
            out
        }
        SamplingPlan::Random { n } => {
            let (slo, shi) = env.config().sigma_range;
            let (llo, lhi) = env.config().case.loss_range;
            (0..*n)
                .map(|_| {
                    let p = rng.int_inclusive(1, env.max_split());
                    let sigma = rng.uniform_range(slo, shi);
                    let loss_prob = rng.uniform_range(llo, lhi);
                    State {
                        sigma,
                        m: env.calibration().m_for(loss_prob),
                        p,
                        loss_prob,
                    }
                })
                .collect()
        }
    };
    states
        .iter()
        .map(|s| {
            let (_, info) = env.reward_true(s, rng)?;
            Ok(SurrogateRecord {
                p: s.p,
                sigma: s.sigma,
                m: s.m,
                ppl: info.ppl.min(cap),
            })
        })
        .collect()
}

pub fn write_records(records: &[SurrogateRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<SurrogateRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["p", "sigma", "m", "ppl"] {
        return Err(Error::InvalidDataset(format!(
            "expected header p,sigma,m,ppl, got {headers:?}"
        )));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidDataset(format!("{other:?}")),
    }
}

pub fn save_surrogate(model: &SurrogateModel, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string(model)?)?;
    Ok(())
}

pub fn load_surrogate(path: &Path) -> Result<SurrogateModel> {
    let model: SurrogateModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{AnalyticPerplexity, EnvConfig};
    use crate::splitlm::LmConfig;

    fn env() -> SplitEnv<AnalyticPerplexity> {
        let cfg = LmConfig {
            n_layers: 8,
            d_in: 8,
            d_mid: 8,
            heads: 2,
            d_ff: 16,
            vocab: 10,
        };
        SplitEnv::new(AnalyticPerplexity::new(cfg), EnvConfig::default()).unwrap()
    }

    #[test]
    fn lattice_cardinality() {
        let mut env = env();
        let plan = SamplingPlan::Lattice {
            p: (1..=7).collect(),
            sigma: vec![0.1, 0.2, 0.3],
            m: vec![1.0, 2.0],
        };
        let recs = collect_records(&mut env, &plan, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(recs.len(), 42);
        let mut keys: Vec<String> = recs
            .iter()
            .map(|r| format!("{} {} {}", r.p, r.sigma, r.m))
            .collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 42);
    }

    #[test]
    fn random_plan_and_csv_roundtrip() {
        let mut env = env();
        let recs = collect_records(
            &mut env,
            &SamplingPlan::Random { n: 25 },
            &mut RngStream::new(1, 0),
        )
        .unwrap();
        assert_eq!(recs.len(), 25);
        assert!(recs.iter().all(|r| r.ppl >= 1.0 && (1..=7).contains(&r.p)));
        let dir = std::env::temp_dir().join(format!("splitedge-recs-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("records.csv");
        write_records(&recs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("p,sigma,m,ppl\n"));
        assert_eq!(read_records(&path).unwrap(), recs);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
