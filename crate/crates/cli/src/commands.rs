use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use splitedge::agents::{
    evaluate_policy, train_agent, ActMode, AgentCheckpoint, AgentKind, EpisodeRow, FixedSource,
    RunLog,
};
use splitedge::analysis::{
    aggregate_curves, artifact_path, curve_rows, ppl_sweep, reward_distribution,
    scatter_from_episodes, scatter_rows, write_csv, write_json, ChannelPoint,
};
use splitedge::environment::{LmPerplexity, RewardSource, SplitEnv};
use splitedge::mathcore::RngStream;
use splitedge::splitlm::{
    chunk_sequences, clean_perplexity, load_lm, load_vocab, save_lm, save_vocab, split_heldout,
    train_lm, LmParams, TokenSeq,
};
use splitedge::surrogate::{
    algorithm1_train, collect_records, fit_surrogate, load_surrogate, read_records, save_surrogate,
    write_records, SamplingPlan,
};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SourceArg {
    True,
    Surrogate,
    Algorithm1,
}

fn require(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Missing(format!("{} does not exist", path.display())))
    }
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Per-command record of inputs, outputs and provenance. `created_unix` is
/// the only field that differs between identical re-runs.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a ExperimentConfig,
    inputs: Vec<Value>,
    outputs: Vec<PathBuf>,
    versions: Value,
    details: Value,
    created_unix: u64,
}

fn write_manifest(
    cfg: &ExperimentConfig,
    command: &str,
    name: &str,
    inputs: &[&Path],
    outputs: Vec<PathBuf>,
    details: Value,
) -> Result<PathBuf, CliError> {
    let inputs = inputs
        .iter()
        .map(|p| Ok(json!({"path": p, "sha256": file_digest(p)?})))
        .collect::<Result<Vec<_>, CliError>>()?;
    let m = Manifest {
        command,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg,
        inputs,
        outputs,
        versions: json!({
            "splitedge": env!("CARGO_PKG_VERSION"),
            "manifest": 1,
        }),
        details,
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = cfg.path(&format!("{name}.manifest.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&m).map_err(splitedge::Error::from)?)?;
    Ok(path)
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

fn rng(cfg: &ExperimentConfig, label: &str) -> RngStream {
    RngStream::named(cfg.seed, label)
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

pub fn train_lm_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let corpus = require(&cfg.corpus)?;
    let text = std::fs::read_to_string(corpus)?;
    prepare_out(cfg)?;
    let trained = train_lm(&text, cfg.lm.shape, &cfg.lm.train, &mut rng(cfg, "splitlm.train"))?;
    let lm = cfg.path("lm.json");
    let vocab = cfg.path("vocab.json");
    let losses = cfg.path("lm.losses.csv");
    save_lm(&trained.params, &lm)?;
    save_vocab(&trained.vocab, &vocab)?;
    let rows: Vec<LossRow> = trained
        .losses
        .iter()
        .enumerate()
        .map(|(step, &loss)| LossRow { step, loss })
        .collect();
    write_csv(&rows, &losses)?;
    let ppl = clean_perplexity(&trained.params, &trained.heldout_seqs)?;
    let v = trained.vocab.size();
    println!("vocabulary {v}, held-out clean perplexity {ppl:.4}");
    write_manifest(
        cfg,
        "train-lm",
        "train-lm",
        &[corpus],
        vec![lm, vocab, losses],
        json!({"clean_ppl": ppl, "vocab": v, "final_loss": trained.losses.last()}),
    )?;
    Ok(())
}

struct Loaded {
    params: Arc<LmParams>,
    pool: Vec<TokenSeq>,
    inputs: Vec<PathBuf>,
}

/// Checkpoint plus the held-out windows of the corpus.
fn load_pipeline(cfg: &ExperimentConfig) -> Result<Loaded, CliError> {
    let lm = cfg.path("lm.json");
    let vocab = cfg.path("vocab.json");
    require(&lm)?;
    require(&vocab)?;
    require(&cfg.corpus)?;
    let params = load_lm(&lm)?;
    let vocab_map = load_vocab(&vocab)?;
    if vocab_map.size() != params.config.vocab {
        return Err(CliError::Config(format!(
            "vocabulary has {} symbols but the checkpoint expects {}",
            vocab_map.size(),
            params.config.vocab
        )));
    }
    let ids = vocab_map.encode(&std::fs::read_to_string(&cfg.corpus)?);
    let (_, held) = split_heldout(&ids, cfg.lm.train.holdout_frac);
    let pool = chunk_sequences(held, params.config.d_in, params.config.d_in);
    if pool.is_empty() {
        return Err(CliError::Config("held-out split is shorter than one context window".into()));
    }
    Ok(Loaded {
        params: Arc::new(params),
        pool,
        inputs: vec![lm, vocab, cfg.corpus.clone()],
    })
}

fn make_env(cfg: &ExperimentConfig, l: &Loaded) -> Result<SplitEnv<LmPerplexity>, CliError> {
    let model = LmPerplexity::new(
        l.params.clone(),
        &l.pool,
        cfg.reward_sample.n_seqs,
        cfg.reward_sample.n_trials,
        &mut rng(cfg, "environment.sample"),
    )?;
    Ok(SplitEnv::new(model, cfg.env.clone())?)
}

fn refs(paths: &[PathBuf]) -> Vec<&Path> {
    paths.iter().map(|p| p.as_path()).collect()
}

pub struct SweepArgs {
    pub p: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub loss: Vec<f64>,
    pub sigma: f64,
    pub n_seqs: usize,
    pub n_trials: usize,
}

pub fn sweep_cmd(cfg: &ExperimentConfig, a: &SweepArgs) -> Result<(), CliError> {
    let l = load_pipeline(cfg)?;
    let max = l.params.config.max_split();
    let p: Vec<usize> = if a.p.is_empty() { (1..=max).collect() } else { a.p.clone() };
    let mut grid = vec![ChannelPoint::Ideal];
    grid.extend(a.snr_db.iter().map(|&snr_db| ChannelPoint::Awgn { snr_db }));
    grid.extend(a.loss.iter().map(|&loss_prob| ChannelPoint::Loss {
        loss_prob,
        sigma: a.sigma,
    }));
    let corpus: Vec<TokenSeq> = l.pool.iter().take(a.n_seqs).cloned().collect();
    let rows = ppl_sweep(
        &l.params,
        &corpus,
        &p,
        &grid,
        cfg.env.omega,
        cfg.env.h_th,
        a.n_trials,
        &rng(cfg, "analysis.sweep"),
    )?;
    prepare_out(cfg)?;
    let out = cfg.path("sweep.csv");
    write_csv(&rows, &out)?;
    println!("{} rows written to {}", rows.len(), out.display());
    write_manifest(cfg, "sweep", "sweep", &refs(&l.inputs), vec![out], json!({"rows": rows.len()}))?;
    Ok(())
}

pub fn collect_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let l = load_pipeline(cfg)?;
    let mut env = make_env(cfg, &l)?;
    let recs = collect_records(
        &mut env,
        &SamplingPlan::Random {
            n: cfg.surrogate.collect_n,
        },
        &mut rng(cfg, "surrogate.collect"),
    )?;
    prepare_out(cfg)?;
    let out = cfg.path("records.csv");
    write_records(&recs, &out)?;
    println!("{} records written to {}", recs.len(), out.display());
    write_manifest(cfg, "collect", "collect", &refs(&l.inputs), vec![out], json!({"records": recs.len()}))?;
    Ok(())
}

pub fn fit_surrogate_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let records_path = cfg.path("records.csv");
    let recs = read_records(require(&records_path)?)?;
    let (model, report) = fit_surrogate(
        &recs,
        &cfg.surrogate.spec,
        cfg.surrogate.cv_folds,
        &mut rng(cfg, "surrogate.fit"),
    )?;
    let model_path = cfg.path("surrogate.json");
    let cv_path = cfg.path("surrogate.cv.json");
    save_surrogate(&model, &model_path)?;
    write_json(&report, &cv_path)?;
    println!(
        "{}-fold CV: MSE {:.5}, MAE {:.5}, normalized MSE {:.4}",
        report.k, report.mean_mse, report.mean_mae, report.normalized_mse
    );
    write_manifest(
        cfg,
        "fit-surrogate",
        "fit-surrogate",
        &[&records_path],
        vec![model_path, cv_path],
        json!({"normalized_mse": report.normalized_mse}),
    )?;
    Ok(())
}

fn save_log(cfg: &ExperimentConfig, log: &RunLog, run_id: &str) -> Result<Vec<PathBuf>, CliError> {
    let steps = artifact_path(&cfg.out_dir, run_id, "steps", "csv");
    let episodes = artifact_path(&cfg.out_dir, run_id, "episodes", "csv");
    log.write_steps_csv(&steps)?;
    log.write_episodes_csv(&episodes)?;
    Ok(vec![steps, episodes])
}

pub fn train_agent_cmd(
    cfg: &ExperimentConfig,
    kind: AgentKind,
    source: SourceArg,
    run_id: Option<String>,
) -> Result<(), CliError> {
    if source == SourceArg::Algorithm1 && kind != AgentKind::Ppo {
        return Err(CliError::Config("--reward-source algorithm1 requires --agent ppo".into()));
    }
    let run_id = run_id.unwrap_or_else(|| {
        let src = serde_json::to_value(source).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        format!("{kind}-{src}-s{}", cfg.seed)
    });
    let l = load_pipeline(cfg)?;
    let mut inputs = l.inputs.clone();
    let mut env = make_env(cfg, &l)?;
    prepare_out(cfg)?;
    let mut r = rng(cfg, &format!("agents.{run_id}"));
    let mut details = json!({"run_id": run_id, "agent": kind, "reward_source": source});
    let (policy, mut log, mut outputs) = match source {
        SourceArg::Algorithm1 => {
            let out = algorithm1_train(&mut env, &cfg.algorithm1(), &mut r, &run_id)?;
            details["switch_epoch"] = json!(out.switch_epoch);
            details["lm_calls_at_switch"] = json!(out.lm_calls_at_switch);
            details["records_at_switch"] = json!(out.records.len());
            details["cv_normalized_mse"] = json!(out.cv_reports.iter().map(|c| c.normalized_mse).collect::<Vec<_>>());
            let mut outputs = Vec::new();
            if let Some(s) = &out.surrogate {
                let p = artifact_path(&cfg.out_dir, &run_id, "surrogate", "json");
                save_surrogate(s, &p)?;
                outputs.push(p);
            }
            log::info!(
                "mean step time: true {:?}, surrogate {:?}",
                out.mean_step_true,
                out.mean_step_surrogate
            );
            (out.agent.policy, out.agent.log, outputs)
        }
        SourceArg::True | SourceArg::Surrogate => {
            let rs = if source == SourceArg::Surrogate {
                let p = cfg.path("surrogate.json");
                env.set_surrogate(Some(load_surrogate(require(&p)?)?));
                inputs.push(p);
                RewardSource::Surrogate
            } else {
                RewardSource::True
            };
            let t = train_agent(
                kind,
                &mut env,
                &cfg.agent.ppo,
                &cfg.agent.dqn,
                cfg.agent.total_steps,
                &mut r,
                &mut FixedSource(rs),
                &run_id,
            )?;
            (t.policy, t.log, Vec::new())
        }
    };
    details["lm_calls"] = json!(env.lm_calls());
    log.config_hash = cfg.hash();
    outputs.extend(save_log(cfg, &log, &run_id)?);
    let ckpt = AgentCheckpoint {
        kind,
        u: cfg.env.u,
        hyper: cfg.agent.ppo.clone(),
        dqn: cfg.agent.dqn.clone(),
        policy,
    };
    let ckpt_path = artifact_path(&cfg.out_dir, &run_id, "agent", "json");
    std::fs::write(&ckpt_path, serde_json::to_string(&ckpt).map_err(splitedge::Error::from)?)?;
    outputs.push(ckpt_path);
    details["final_mean_reward"] = json!(log.final_mean_reward(100));
    println!(
        "{run_id}: {} steps, {} episodes, mean reward of the last 100 episodes {:.4}",
        log.steps.len(),
        log.episodes.len(),
        log.final_mean_reward(100)
    );
    write_manifest(cfg, "train-agent", &run_id, &refs(&inputs), outputs, details)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    episode: usize,
    total_reward: f64,
    reported_reward: f64,
    final_p: usize,
    decision_sigma: f64,
    mean_ppl: f64,
}

pub fn eval_cmd(
    cfg: &ExperimentConfig,
    run_id: &str,
    episodes: Option<usize>,
    source: RewardSource,
) -> Result<(), CliError> {
    let ckpt_path = artifact_path(&cfg.out_dir, run_id, "agent", "json");
    let text = std::fs::read_to_string(require(&ckpt_path)?)?;
    let ckpt: AgentCheckpoint = serde_json::from_str(&text).map_err(splitedge::Error::from)?;
    if ckpt.u != cfg.env.u {
        return Err(CliError::Config(format!(
            "agent was trained with u={} but env.u={}",
            ckpt.u, cfg.env.u
        )));
    }
    let l = load_pipeline(cfg)?;
    let mut inputs = l.inputs.clone();
    inputs.push(ckpt_path);
    let mut env = make_env(cfg, &l)?;
    if source == RewardSource::Surrogate {
        let p = cfg.path("surrogate.json");
        env.set_surrogate(Some(load_surrogate(require(&p)?)?));
        inputs.push(p);
    }
    let n = episodes.unwrap_or(cfg.eval.episodes);
    let eps = evaluate_policy(&ckpt.policy, &mut env, n, ActMode::Greedy, source, &mut rng(cfg, "eval"))?;
    let rows: Vec<EvalRow> = eps
        .iter()
        .enumerate()
        .map(|(i, e)| EvalRow {
            episode: i,
            total_reward: e.total_reward,
            reported_reward: cfg.report.apply(e.total_reward),
            final_p: e.final_state.p,
            decision_sigma: e.decision_sigma,
            mean_ppl: e.mean_ppl,
        })
        .collect();
    let rewards_path = artifact_path(&cfg.out_dir, run_id, "rewards", "csv");
    write_csv(&rows, &rewards_path)?;
    let mut outputs = vec![rewards_path];
    let dist = reward_distribution(&rows.iter().map(|r| r.reported_reward).collect::<Vec<_>>())?;
    let mut details = json!({"episodes": n, "median": dist.median, "iqr": dist.iqr});
    if n >= 5 {
        let sc = scatter_from_episodes(&eps)?;
        let p = artifact_path(&cfg.out_dir, run_id, "scatter", "csv");
        write_csv(&scatter_rows(&sc), &p)?;
        outputs.push(p);
        details["loess_slope"] = json!(sc.trend.global_slope);
        details["loess_r_squared"] = json!(sc.trend.r_squared);
    }
    println!("{run_id}: {n} greedy episodes, median reward {:.4} (IQR {:.4})", dist.median, dist.iqr);
    write_manifest(cfg, "eval", &format!("{run_id}.eval"), &refs(&inputs), outputs, details)?;
    Ok(())
}

#[derive(Deserialize)]
struct RewardRow {
    total_reward: f64,
}

pub fn analyze_cmd(
    cfg: &ExperimentConfig,
    runs: &[String],
    window: usize,
    name: &str,
) -> Result<(), CliError> {
    if runs.is_empty() {
        return Err(CliError::Config("analyze needs at least one --run".into()));
    }
    let mut logs = Vec::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for run in runs {
        let ckpt_path = artifact_path(&cfg.out_dir, run, "agent", "json");
        let ep_path = artifact_path(&cfg.out_dir, run, "episodes", "csv");
        let ckpt: AgentCheckpoint = serde_json::from_str(&std::fs::read_to_string(require(&ckpt_path)?)?)
            .map_err(splitedge::Error::from)?;
        let episodes: Vec<EpisodeRow> = RunLog::read_episodes_csv(require(&ep_path)?)?;
        let mut log = RunLog::new(run.clone(), ckpt.kind, cfg.seed, cfg.hash());
        log.episodes = episodes
            .into_iter()
            .map(|e| EpisodeRow {
                total_reward: cfg.report.apply(e.total_reward),
                ..e
            })
            .collect();
        logs.push(log);
        inputs.push(ep_path);

        let rewards_path = artifact_path(&cfg.out_dir, run, "rewards", "csv");
        if rewards_path.exists() {
            let mut rdr = csv::Reader::from_path(&rewards_path).map_err(|e| CliError::Runtime(e.to_string()))?;
            let rewards = rdr
                .deserialize::<RewardRow>()
                .map(|r| r.map(|r| cfg.report.apply(r.total_reward)))
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let dist = reward_distribution(&rewards)?;
            let p = artifact_path(&cfg.out_dir, run, "distribution", "json");
            write_json(&dist, &p)?;
            outputs.push(p);
            inputs.push(rewards_path);
        }
    }
    for c in aggregate_curves(&logs, window)? {
        let p = artifact_path(&cfg.out_dir, name, &format!("curve-{}", c.agent), "csv");
        write_csv(&curve_rows(&c), &p)?;
        println!(
            "{}: {} runs, final smoothed reward {:.4}{}",
            c.agent,
            c.runs,
            c.mean.last().copied().unwrap_or(f64::NAN),
            if c.regridded { " (regridded)" } else { "" }
        );
        outputs.push(p);
    }
    write_manifest(
        cfg,
        "analyze",
        &format!("{name}.analyze"),
        &refs(&inputs),
        outputs,
        json!({"runs": runs, "window": window}),
    )?;
    Ok(())
}
