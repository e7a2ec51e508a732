use serde::{Deserialize, Serialize};

use super::loess::{loess, TrendFit};
use crate::agents::{
    evaluate_policy, train_agent, ActMode, AgentKind, AgentPolicy, DqnHyper, EpisodeSummary,
    FixedSource, PpoHyper, RunLog,
};
use crate::channel::{snr_to_sigma, ChannelParams};
use crate::environment::{PerplexityModel, RewardSource, SplitEnv};
use crate::error::{Error, Result};
use crate::mathcore::RngStream;
use crate::splitlm::{
    activations_by_layer, perplexity_from_ue, IntermediateTensor, LmParams, TokenSeq,
};

/// One channel setting of a perplexity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ChannelPoint {
    Ideal,
    /// Additive noise at a signal-to-noise ratio measured against the RMS of
    /// the intermediate tensor at each split.
    Awgn {
        snr_db: f64,
    },
    /// Nakagami fading with threshold loss, `m` calibrated to `loss_prob`.
    Loss {
        loss_prob: f64,
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: usize,
    pub mode: String,
    pub sigma: f64,
    pub m: f64,
    /// Set in AWGN mode only.
    pub snr_db: Option<f64>,
    pub loss_prob: f64,
    pub ppl: f64,
    pub stderr: f64,
}

/// Mean perplexity at every `(p, point)` pair. Each pair draws from its own
/// stream, so rows do not depend on list order.
#[allow(clippy::too_many_arguments)]
pub fn ppl_sweep(
    params: &LmParams,
    corpus: &[TokenSeq],
    p_list: &[usize],
    grid: &[ChannelPoint],
    omega: f64,
    h_th: f64,
    n_trials: usize,
    rng: &RngStream,
) -> Result<Vec<SweepRow>> {
    for &p in p_list {
        params.config.check_split(p)?;
    }
    let mut ue: Vec<Vec<IntermediateTensor>> =
        vec![Vec::with_capacity(corpus.len()); params.config.max_split()];
    for seq in corpus {
        for (i, a) in activations_by_layer(params, seq)?.into_iter().enumerate() {
            ue[i].push(a);
        }
    }
    let mut rows = Vec::with_capacity(p_list.len() * grid.len());
    for &p in p_list {
        let acts = &ue[p - 1];
        let n: usize = acts.iter().map(|a| a.matrix().data().len()).sum();
        let rms = (acts
            .iter()
            .flat_map(|a| a.matrix().data())
            .map(|v| v * v)
            .sum::<f64>()
            / n as f64)
            .sqrt();
        for point in grid {
            let (channel, mode, snr_db, loss_prob) = match *point {
                ChannelPoint::Ideal => (ChannelParams::ideal(), "ideal", None, 0.0),
                ChannelPoint::Awgn { snr_db } => (
                    ChannelParams::awgn(snr_to_sigma(snr_db, rms)?),
                    "awgn",
                    Some(snr_db),
                    0.0,
                ),
                ChannelPoint::Loss { loss_prob, sigma } => {
                    let m = crate::channel::calibrate_m(loss_prob, omega, h_th)?;
                    (
                        ChannelParams::nakagami(m, omega, sigma, h_th),
                        "loss",
                        None,
                        loss_prob,
                    )
                }
            };
            let label = format!("sweep.{p}.{}", serde_json::to_string(point)?);
            let est = perplexity_from_ue(
                params,
                acts,
                corpus,
                p,
                &channel,
                &mut rng.derive(&label),
                n_trials,
            )?;
            rows.push(SweepRow {
                p,
                mode: mode.to_string(),
                sigma: channel.sigma,
                m: channel.m,
                snr_db,
                loss_prob,
                ppl: est.ppl,
                stderr: est.stderr,
            });
        }
    }
    Ok(rows)
}

/// Chosen split against the noise level the agent saw when choosing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScatter {
    pub sigma: Vec<f64>,
    pub p: Vec<usize>,
    pub trend: TrendFit,
}

pub const LOESS_FRAC: f64 = 0.3;

/// Runs `n` greedy episodes and records, for the final decision of each,
/// the observed `σ` and the split the agent moved to.
pub fn splitpoint_scatter<M: PerplexityModel>(
    policy: &AgentPolicy,
    env: &mut SplitEnv<M>,
    n: usize,
    source: RewardSource,
    rng: &mut RngStream,
) -> Result<SplitScatter> {
    scatter_from_episodes(&evaluate_policy(
        policy,
        env,
        n,
        ActMode::Greedy,
        source,
        rng,
    )?)
}

/// Scatter and trend from already-run evaluation episodes.
pub fn scatter_from_episodes(episodes: &[EpisodeSummary]) -> Result<SplitScatter> {
    let sigma: Vec<f64> = episodes.iter().map(|e| e.decision_sigma).collect();
    let p: Vec<usize> = episodes.iter().map(|e| e.final_state.p).collect();
    let y: Vec<f64> = p.iter().map(|&v| v as f64).collect();
    let trend = loess(&sigma, &y, LOESS_FRAC, 1)?;
    Ok(SplitScatter { sigma, p, trend })
}

/// One-at-a-time variations around the default PPO settings.
pub fn hyper_grid() -> Vec<(String, PpoHyper)> {
    let base = PpoHyper::default();
    let mut out = vec![("default".to_string(), base.clone())];
    for alpha in [5e-4, 7e-4] {
        out.push((
            format!("alpha={alpha}"),
            PpoHyper {
                alpha,
                ..base.clone()
            },
        ));
    }
    for batch in [150, 200] {
        out.push((
            format!("batch={batch}"),
            PpoHyper {
                batch,
                ..base.clone()
            },
        ));
    }
    for epsilon_clip in [0.1, 0.3] {
        out.push((
            format!("epsilon={epsilon_clip}"),
            PpoHyper {
                epsilon_clip,
                ..base.clone()
            },
        ));
    }
    for xi_gae in [0.90, 0.99] {
        out.push((
            format!("xi={xi_gae}"),
            PpoHyper {
                xi_gae,
                ..base.clone()
            },
        ));
    }
    out
}

/// Result of one learning run in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub label: String,
    pub u: usize,
    pub n_actions: usize,
    pub log: RunLog,
}

/// PPO learning curves for each `(label, hyper)` variant, one run per seed.
pub fn hyper_sweep<M: PerplexityModel>(
    mut make_env: impl FnMut() -> Result<SplitEnv<M>>,
    variants: &[(String, PpoHyper)],
    total_steps: usize,
    seeds: &[u64],
    source: RewardSource,
) -> Result<Vec<SweepRun>> {
    let mut out = Vec::new();
    for (label, hyper) in variants {
        for &seed in seeds {
            let mut env = make_env()?;
            let u = env.config().u;
            let trained = train_agent(
                AgentKind::Ppo,
                &mut env,
                hyper,
                &DqnHyper::default(),
                total_steps,
                &mut RngStream::named(seed, &format!("sweep.{label}")),
                &mut FixedSource(source),
                &format!("{label}.seed{seed}"),
            )?;
            out.push(SweepRun {
                label: label.clone(),
                u,
                n_actions: trained.policy.n_actions(),
                log: trained.log,
            });
        }
    }
    Ok(out)
}

/// PPO learning curves for each action-space width `u`.
pub fn action_space_sweep<M: PerplexityModel>(
    mut make_env: impl FnMut(usize) -> Result<SplitEnv<M>>,
    us: &[usize],
    hyper: &PpoHyper,
    total_steps: usize,
    seed: u64,
    source: RewardSource,
) -> Result<Vec<SweepRun>> {
    let mut out = Vec::new();
    for &u in us {
        let mut env = make_env(u)?;
        if env.config().u != u || env.n_actions() != 2 * u + 1 {
            return Err(Error::param(format!(
                "environment for u={u} has {} actions",
                env.n_actions()
            )));
        }
        let trained = train_agent(
            AgentKind::Ppo,
            &mut env,
            hyper,
            &DqnHyper::default(),
            total_steps,
            &mut RngStream::named(seed, &format!("sweep.u{u}")),
            &mut FixedSource(source),
            &format!("u{u}"),
        )?;
        out.push(SweepRun {
            label: format!("u={u}"),
            u,
            n_actions: trained.policy.n_actions(),
            log: trained.log,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{AnalyticPerplexity, CaseName, EnvConfig};
    use crate::splitlm::{clean_perplexity, LmConfig};

    fn lm() -> LmParams {
        let cfg = LmConfig {
            n_layers: 4,
            d_in: 8,
            d_mid: 8,
            heads: 2,
            d_ff: 16,
            vocab: 7,
        };
        LmParams::init(cfg, &mut RngStream::new(0, 0)).unwrap()
    }

    fn corpus() -> Vec<TokenSeq> {
        (0..4)
            .map(|i| (0..8).map(|j| ((i + j * 3) % 7) as u32).collect())
            .collect()
    }

    #[test]
    fn one_point_one_row() {
        let rows = ppl_sweep(
            &lm(),
            &corpus(),
            &[2],
            &[ChannelPoint::Awgn { snr_db: 10.0 }],
            1.0,
            0.5,
            1,
            &RngStream::new(1, 0),
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mode, "awgn");
    }

    #[test]
    fn ideal_rows_match_clean_ppl() {
        let params = lm();
        let clean = clean_perplexity(&params, &corpus()).unwrap();
        let rows = ppl_sweep(
            &params,
            &corpus(),
            &[1, 2, 3],
            &[ChannelPoint::Ideal],
            1.0,
            0.5,
            1,
            &RngStream::new(2, 0),
        )
        .unwrap();
        for r in rows {
            assert!((r.ppl - clean).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_do_not_depend_on_grid_order() {
        let params = lm();
        let a = ChannelPoint::Loss {
            loss_prob: 0.2,
            sigma: 0.1,
        };
        let b = ChannelPoint::Awgn { snr_db: 5.0 };
        let rng = RngStream::new(3, 0);
        let ab = ppl_sweep(&params, &corpus(), &[2], &[a, b], 1.0, 0.5, 2, &rng).unwrap();
        let ba = ppl_sweep(&params, &corpus(), &[2], &[b, a], 1.0, 0.5, 2, &rng).unwrap();
        assert_eq!(ab[0], ba[1]);
        assert_eq!(ab[1], ba[0]);
    }

    #[test]
    fn fixed_split_policy_gives_flat_trend() {
        let cfg = LmConfig {
            n_layers: 8,
            ..LmConfig::toy(10)
        };
        let mut ec = EnvConfig::for_case(CaseName::A, 7);
        ec.case.init_p_range = (4, 4);
        let mut env = SplitEnv::new(AnalyticPerplexity::new(cfg), ec).unwrap();
        let policy = AgentPolicy::Q {
            q: crate::neuralnet::Mlp::zeros(crate::neuralnet::MlpSpec {
                layer_sizes: vec![3, 3],
                hidden_activation: crate::neuralnet::HiddenActivation::Tanh,
                output_activation: crate::neuralnet::OutputActivation::Identity,
            })
            .unwrap(),
        };
        // all-zero Q picks action 0 (move down by one) every step: p = 4 − 5 clamped to 1
        let sc = splitpoint_scatter(
            &policy,
            &mut env,
            50,
            RewardSource::True,
            &mut RngStream::new(4, 0),
        )
        .unwrap();
        assert_eq!(sc.p.len(), 50);
        assert!(sc.p.iter().all(|&p| p == 1));
        assert!(sc.trend.global_slope.abs() < 1e-12);
    }

    #[test]
    fn grid_has_default_plus_eight() {
        let g = hyper_grid();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0].1, PpoHyper::default());
    }

    #[test]
    fn action_sweep_cardinality() {
        let cfg = LmConfig::toy(10);
        let runs = action_space_sweep(
            |u| {
                SplitEnv::new(
                    AnalyticPerplexity::new(cfg),
                    EnvConfig {
                        u,
                        ..EnvConfig::for_case(CaseName::A, 7)
                    },
                )
            },
            &[1, 2, 3],
            &PpoHyper::default(),
            400,
            0,
            RewardSource::True,
        )
        .unwrap();
        let n: Vec<usize> = runs.iter().map(|r| r.n_actions).collect();
        assert_eq!(n, vec![3, 5, 7]);
        assert!(runs.iter().all(|r| r.log.steps.len() == 400));
    }
}
