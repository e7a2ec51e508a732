use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{Matrix, RngStream};
use crate::neuralnet::{clip_global_norm, copy_into, mse_loss, AdamState, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnHyper {
    pub replay_capacity: usize,
    pub batch: usize,
    /// Environment steps between target-network copies.
    pub target_sync: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of training over which ε decays linearly.
    pub eps_decay_frac: f64,
    /// Steps collected before the first update.
    pub learning_starts: usize,
}

impl Default for DqnHyper {
    fn default() -> Self {
        DqnHyper {
            replay_capacity: 10_000,
            batch: 64,
            target_sync: 500,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_frac: 0.5,
            learning_starts: 200,
        }
    }
}

impl DqnHyper {
    pub fn epsilon(&self, step: usize, total: usize) -> f64 {
        let horizon = (self.eps_decay_frac * total as f64).max(1.0);
        let t = (step as f64 / horizon).min(1.0);
        self.eps_start + t * (self.eps_end - self.eps_start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqnTransition {
    pub obs: [f64; 3],
    pub action: usize,
    pub reward: f64,
    pub next_obs: [f64; 3],
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    capacity: usize,
    items: Vec<DqnTransition>,
    next: usize,
}

impl Replay {
    pub fn new(capacity: usize) -> Self {
        Replay {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: DqnTransition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Vec<DqnTransition> {
        (0..n)
            .map(|_| self.items[rng.below(self.items.len())])
            .collect()
    }
}

/// ε-greedy action from Q-values.
pub fn epsilon_greedy(q: &[f64], eps: f64, rng: &mut RngStream) -> usize {
    if rng.uniform() < eps {
        rng.below(q.len())
    } else {
        argmax(q)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Target network copy.
pub fn sync_target(target: &mut Mlp, online: &Mlp) {
    copy_into(target, online);
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DqnMetrics {
    pub td_loss: f64,
    pub mean_q: f64,
}

/// One gradient step on `mean((Q(s,a) − (r + γ max Q_target(s')))²)`.
pub fn dqn_update(
    q: &mut Mlp,
    target: &Mlp,
    opt: &mut AdamState,
    replay: &Replay,
    batch: usize,
    gamma: f64,
    max_grad_norm: f64,
    rng: &mut RngStream,
) -> Result<DqnMetrics> {
    if replay.len() < batch || batch == 0 {
        return Err(Error::param(format!(
            "replay holds {} transitions, need {batch}",
            replay.len()
        )));
    }
    let sample = replay.sample(batch, rng);
    let mut x = Matrix::zeros(batch, 3);
    let mut xn = Matrix::zeros(batch, 3);
    for (i, t) in sample.iter().enumerate() {
        x.row_mut(i).copy_from_slice(&t.obs);
        xn.row_mut(i).copy_from_slice(&t.next_obs);
    }
    let next_q = target.predict(&xn)?;
    let (qs, cache) = q.forward(&x)?;
    // only the taken action's output gets a target; others are held fixed
    let mut tgt = qs.clone();
    let mut mean_q = 0.0;
    for (i, t) in sample.iter().enumerate() {
        let boot = if t.done {
            0.0
        } else {
            gamma
                * next_q
                    .row(i)
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max)
        };
        tgt.set(i, t.action, t.reward + boot);
        mean_q += qs.get(i, t.action);
    }
    let (loss, mut grad) = mse_loss(&qs, &tgt)?;
    if !loss.is_finite() {
        return Err(Error::TrainingFailure {
            step: opt.step_count() as usize,
        });
    }
    // mse_loss averages over every entry; rescale to a per-sample mean
    let k = qs.cols() as f64;
    grad.scale_mut(k);
    let mut g = q.backward(&cache, &grad)?;
    clip_global_norm(&mut g, max_grad_norm);
    opt.step(q, &g)?;
    Ok(DqnMetrics {
        td_loss: loss * k,
        mean_q: mean_q / batch as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{AdamConfig, HiddenActivation, MlpSpec, OutputActivation};

    fn qnet(rng: &mut RngStream) -> Mlp {
        Mlp::init(
            MlpSpec {
                layer_sizes: vec![3, 32, 3],
                hidden_activation: HiddenActivation::Tanh,
                output_activation: OutputActivation::Identity,
            },
            rng,
        )
        .unwrap()
    }

    #[test]
    fn epsilon_schedule_and_uniform_exploration() {
        let h = DqnHyper::default();
        assert_eq!(h.epsilon(0, 1000), 1.0);
        assert!((h.epsilon(500, 1000) - 0.05).abs() < 1e-12);
        assert!((h.epsilon(900, 1000) - 0.05).abs() < 1e-12);
        let mut rng = RngStream::new(0, 0);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[epsilon_greedy(&[5.0, 0.0, 0.0], 1.0, &mut rng)] += 1;
        }
        assert!(
            counts.iter().all(|&c| (c as f64 - 10_000.0).abs() < 400.0),
            "{counts:?}"
        );
    }

    #[test]
    fn target_sync_is_exact() {
        let mut rng = RngStream::new(1, 0);
        let online = qnet(&mut rng);
        let mut target = qnet(&mut rng);
        assert_ne!(online, target);
        sync_target(&mut target, &online);
        assert_eq!(online, target);
    }

    #[test]
    fn replay_ring() {
        let mut r = Replay::new(3);
        for i in 0..5 {
            r.push(DqnTransition {
                obs: [i as f64; 3],
                action: 0,
                reward: i as f64,
                next_obs: [0.0; 3],
                done: true,
            });
        }
        assert_eq!(r.len(), 3);
        let rewards: Vec<f64> = r.items.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn fits_immediate_rewards_with_zero_discount() {
        // three states, reward depends on (state, action) only
        let mut rng = RngStream::new(2, 0);
        let mut q = qnet(&mut rng);
        let target = q.clone();
        let mut opt = AdamState::new(&q, AdamConfig::with_lr(3e-3));
        let mut replay = Replay::new(1000);
        let table = [[1.0, 0.0, -1.0], [0.0, 2.0, 0.5], [-0.5, 0.3, 1.5]];
        for _ in 0..600 {
            let s = rng.below(3);
            let a = rng.below(3);
            replay.push(DqnTransition {
                obs: [s as f64 / 2.0, 0.5, 0.0],
                action: a,
                reward: table[s][a],
                next_obs: [0.0; 3],
                done: false,
            });
        }
        let mut last = f64::INFINITY;
        for _ in 0..1500 {
            last = dqn_update(&mut q, &target, &mut opt, &replay, 64, 0.0, 10.0, &mut rng)
                .unwrap()
                .td_loss;
        }
        assert!(last < 1e-3, "{last}");
        for (s, row) in table.iter().enumerate() {
            let out = q
                .predict(&Matrix::row_vector(&[s as f64 / 2.0, 0.5, 0.0]))
                .unwrap();
            for a in 0..3 {
                assert!((out.get(0, a) - row[a]).abs() < 0.05);
            }
        }
    }
}
