//! `splitedge`: train the toy language model, sweep perplexity over split
//! points and channels, collect surrogate data, train and evaluate split
//! controllers, and summarize runs.
//!
//! Exit codes: 0 success, 2 missing input, 3 invalid configuration,
//! 4 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{SourceArg, SweepArgs};
use config::ExperimentConfig;
use splitedge::agents::AgentKind;
use splitedge::environment::RewardSource;

#[derive(Debug)]
pub enum CliError {
    Missing(String),
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Missing(_) => 2,
            CliError::Config(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Missing(m) => write!(f, "missing input: {m}"),
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<splitedge::Error> for CliError {
    fn from(e: splitedge::Error) -> Self {
        use splitedge::Error as E;
        match e {
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => CliError::Missing(io.to_string()),
            E::InvalidParameter(_) | E::InvalidSplit { .. } | E::Calibration { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        splitedge::Error::Io(e).into()
    }
}

#[derive(Parser)]
#[command(name = "splitedge", version, about = "Split-inference experiments over a lossy wireless link")]
struct Cli {
    /// JSON experiment config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dot-keyed override such as `env.reward.lambda=0.5` (repeatable).
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the toy language model on the corpus.
    TrainLm,
    /// Perplexity against split point under ideal, AWGN and lossy channels.
    Sweep {
        /// Split points (default: all).
        #[arg(long, value_delimiter = ',')]
        p: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "20,10,0")]
        snr_db: Vec<f64>,
        /// Packet-loss probabilities for the fading mode.
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.3")]
        loss: Vec<f64>,
        /// Additive noise level used with the fading mode.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 32)]
        seqs: usize,
        #[arg(long, default_value_t = 4)]
        trials: usize,
    },
    /// Record true perplexities at random states for surrogate training.
    Collect,
    /// Cross-validate and fit the reward surrogate on collected records.
    FitSurrogate,
    /// Train a split-point controller.
    TrainAgent {
        #[arg(long, value_enum)]
        agent: Option<AgentArg>,
        #[arg(long, value_enum, default_value = "true")]
        reward_source: SourceArg,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Greedy evaluation of a trained controller.
    Eval {
        #[arg(long)]
        run_id: String,
        #[arg(long)]
        episodes: Option<usize>,
        /// Score with the fitted surrogate instead of the language model.
        #[arg(long)]
        surrogate: bool,
    },
    /// Learning curves and reward distributions of finished runs.
    Analyze {
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        #[arg(long, default_value_t = 20)]
        window: usize,
        #[arg(long, default_value = "analysis")]
        name: String,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AgentArg {
    Ppo,
    A2c,
    Dqn,
    Random,
}

impl From<AgentArg> for AgentKind {
    fn from(a: AgentArg) -> Self {
        match a {
            AgentArg::Ppo => AgentKind::Ppo,
            AgentArg::A2c => AgentKind::A2c,
            AgentArg::Dqn => AgentKind::Dqn,
            AgentArg::Random => AgentKind::Random,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.set)?;
    match cli.cmd {
        Cmd::TrainLm => commands::train_lm_cmd(&cfg),
        Cmd::Sweep {
            p,
            snr_db,
            loss,
            sigma,
            seqs,
            trials,
        } => commands::sweep_cmd(
            &cfg,
            &SweepArgs {
                p,
                snr_db,
                loss,
                sigma,
                n_seqs: seqs,
                n_trials: trials,
            },
        ),
        Cmd::Collect => commands::collect_cmd(&cfg),
        Cmd::FitSurrogate => commands::fit_surrogate_cmd(&cfg),
        Cmd::TrainAgent {
            agent,
            reward_source,
            run_id,
        } => {
            let kind = agent.map(AgentKind::from).unwrap_or(cfg.agent.kind);
            commands::train_agent_cmd(&cfg, kind, reward_source, run_id)
        }
        Cmd::Eval {
            run_id,
            episodes,
            surrogate,
        } => {
            let source = if surrogate { RewardSource::Surrogate } else { RewardSource::True };
            commands::eval_cmd(&cfg, &run_id, episodes, source)
        }
        Cmd::Analyze { runs, window, name } => commands::analyze_cmd(&cfg, &runs, window, &name),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("splitedge: {e}");
            ExitCode::from(e.code())
        }
    }
}
