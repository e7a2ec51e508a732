//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each operation has a plain Rust form returning a serializable struct and
//! a `#[wasm_bindgen]` wrapper that hands the page a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use splitedge::agents::{
    evaluate_policy, train_agent, ActMode, AgentKind, DqnHyper, FixedSource, PpoHyper,
};
use splitedge::analysis::moving_average;
use splitedge::channel::packet_loss_prob;
use splitedge::environment::{
    AnalyticPerplexity, CaseName, EnvConfig, RewardSource, SplitEnv, State,
};
use splitedge::mathcore::{nakagami_pdf, RngStream};
use splitedge::splitlm::LmConfig;

/// Model shape behind the cost figures: 8 layers, 16-token context, width
/// 64, 4 heads.
pub fn demo_model() -> LmConfig {
    LmConfig {
        n_layers: 8,
        d_in: 16,
        d_mid: 64,
        heads: 4,
        d_ff: 256,
        vocab: 65,
    }
}

/// Training runs are capped so the page stays responsive.
pub const MAX_TRAIN_STEPS: usize = 40_000;

#[derive(Debug, Clone, Serialize)]
pub struct ChannelCurve {
    pub h: Vec<f64>,
    pub pdf: Vec<f64>,
    pub loss: Vec<f64>,
}

/// Gain density and loss probability `P(h < h_th)` over `h_th ∈ [0, h_max]`.
pub fn channel_curve(m: f64, omega: f64, h_max: f64, points: usize) -> splitedge::Result<ChannelCurve> {
    if points < 2 || !(h_max > 0.0) {
        return Err(splitedge::Error::InvalidParameter("need at least 2 points and h_max > 0".into()));
    }
    let h: Vec<f64> = (0..points)
        .map(|i| h_max * i as f64 / (points - 1) as f64)
        .collect();
    let pdf = h
        .iter()
        .map(|&x| nakagami_pdf(x, m, omega))
        .collect::<splitedge::Result<_>>()?;
    let loss = h
        .iter()
        .map(|&x| packet_loss_prob(m, omega, x))
        .collect::<splitedge::Result<_>>()?;
    Ok(ChannelCurve { h, pdf, loss })
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitRow {
    pub p: usize,
    pub flops: u64,
    pub cost_term: f64,
    pub ppl: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Tradeoff {
    pub m: f64,
    pub rows: Vec<SplitRow>,
    pub best_p: usize,
}

fn analytic_env(config: EnvConfig) -> splitedge::Result<SplitEnv<AnalyticPerplexity>> {
    SplitEnv::new(AnalyticPerplexity::new(demo_model()), config)
}

/// Reward at every split for one channel condition, using the closed-form
/// perplexity stand-in.
pub fn split_tradeoff(loss_prob: f64, sigma: f64, lambda: f64) -> splitedge::Result<Tradeoff> {
    if !(0.0..0.95).contains(&loss_prob) || !(sigma >= 0.0) {
        return Err(splitedge::Error::InvalidParameter("need 0 <= loss < 0.95 and sigma >= 0".into()));
    }
    let max = demo_model().max_split();
    let mut config = EnvConfig::for_case(CaseName::A, max);
    config.reward.lambda = lambda;
    // a one-point range calibrates m exactly for this loss
    config.case.loss_range = (loss_prob, loss_prob);
    let mut env = analytic_env(config)?;
    let m = env.calibration().m_for(loss_prob);
    let mut rng = RngStream::new(0, 0);
    let mut rows = Vec::with_capacity(max);
    for p in 1..=max {
        let s = State {
            sigma,
            m,
            p,
            loss_prob,
        };
        let (reward, info) = env.reward_true(&s, &mut rng)?;
        rows.push(SplitRow {
            p,
            flops: info.cost,
            cost_term: info.cost_term,
            ppl: info.ppl,
            reward,
        });
    }
    let best_p = rows
        .iter()
        .max_by(|a, b| a.reward.total_cmp(&b.reward))
        .map(|r| r.p)
        .unwrap_or(1);
    Ok(Tradeoff { m, rows, best_p })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingRun {
    pub episode_end: Vec<usize>,
    pub reward: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// Greedy evaluation: how often each split was chosen last (index `p`).
    pub final_p_counts: Vec<usize>,
    pub eval_mean_reward: f64,
}

/// PPO on the analytic environment, then 200 greedy evaluation episodes.
pub fn train_controller(case: &str, steps: usize, seed: u64, lambda: f64) -> splitedge::Result<TrainingRun> {
    if steps == 0 || steps > MAX_TRAIN_STEPS {
        return Err(splitedge::Error::InvalidParameter(format!(
            "steps must be in 1..={MAX_TRAIN_STEPS}"
        )));
    }
    let name: CaseName = case.parse()?;
    let max = demo_model().max_split();
    let mut config = EnvConfig::for_case(name, max);
    config.reward.lambda = lambda;
    let mut env = analytic_env(config)?;
    let root = RngStream::named(seed, "web");
    let trained = train_agent(
        AgentKind::Ppo,
        &mut env,
        &PpoHyper::default(),
        &DqnHyper::default(),
        steps,
        &mut root.derive("train"),
        &mut FixedSource(RewardSource::True),
        "web",
    )?;
    let reward: Vec<f64> = trained.log.episodes.iter().map(|e| e.total_reward).collect();
    let eval = evaluate_policy(
        &trained.policy,
        &mut env,
        200,
        ActMode::Greedy,
        RewardSource::True,
        &mut root.derive("eval"),
    )?;
    let mut final_p_counts = vec![0; max + 1];
    for e in &eval {
        final_p_counts[e.final_state.p] += 1;
    }
    Ok(TrainingRun {
        episode_end: trained.log.episodes.iter().map(|e| e.end_step).collect(),
        smoothed: moving_average(&reward, 20),
        reward,
        final_p_counts,
        eval_mean_reward: eval.iter().map(|e| e.total_reward).sum::<f64>() / eval.len() as f64,
    })
}

fn to_js<T: Serialize>(r: splitedge::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = channelCurve)]
pub fn channel_curve_js(m: f64, omega: f64, h_max: f64, points: usize) -> Result<String, JsError> {
    to_js(channel_curve(m, omega, h_max, points))
}

#[wasm_bindgen(js_name = splitTradeoff)]
pub fn split_tradeoff_js(loss_prob: f64, sigma: f64, lambda: f64) -> Result<String, JsError> {
    to_js(split_tradeoff(loss_prob, sigma, lambda))
}

#[wasm_bindgen(js_name = trainController)]
pub fn train_controller_js(case: &str, steps: usize, seed: u32, lambda: f64) -> Result<String, JsError> {
    to_js(train_controller(case, steps, seed as u64, lambda))
}
