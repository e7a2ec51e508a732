use serde::{Deserialize, Serialize};

use super::{log_softmax_row, PpoHyper};
use crate::error::{Error, Result};
use crate::mathcore::{Matrix, RngStream};
use crate::neuralnet::{all_finite, clip_global_norm, mse_loss, AdamState, Mlp};

/// On-policy storage for one update round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub obs: Vec<[f64; 3]>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Transition `t` ended its episode.
    pub dones: Vec<bool>,
    /// Value of the state following the last transition, used only when the
    /// buffer stops mid-episode.
    pub last_value: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn clear(&mut self) {
        *self = RolloutBuffer::default();
    }

    pub fn push(
        &mut self,
        obs: [f64; 3],
        action: usize,
        log_prob: f64,
        reward: f64,
        value: f64,
        done: bool,
    ) {
        self.obs.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    pub fn episode_count(&self) -> usize {
        self.dones.iter().filter(|&&d| d).count()
    }
}

/// Generalized advantage estimation.
///
/// `δ_t = r_t + γ V(s_{t+1}) − V(s_t)` and `Â_t = δ_t + γξ Â_{t+1}`, with
/// both the bootstrap and the recursion cut at episode ends. Returns the raw
/// advantages and the value targets `Â_t + V(s_t)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    xi: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_v * cont - values[t];
        next_adv = delta + gamma * xi * cont * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Zero mean, unit variance (left unscaled when the spread is ~0).
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return Vec::new();
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    xs.iter().map(|x| (x - mean) / (sd + 1e-8)).collect()
}

/// The clipped objective term for one sample, `min(ρÂ, clip(ρ, 1±ε)Â)`.
pub fn clipped_term(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Largest `|ρ − 1|` and the policy loss on the very first minibatch.
    pub first_ratio_dev: f64,
    pub first_policy_loss: f64,
    /// Non-finite loss encountered; remaining minibatches were skipped.
    pub aborted: bool,
}

pub(crate) struct BatchGrad {
    /// Gradient of the minimized loss with respect to the policy logits.
    pub dlogits: Matrix,
    pub policy_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub max_ratio_dev: f64,
}

fn obs_matrix(obs: &[[f64; 3]], idx: &[usize]) -> Matrix {
    let mut x = Matrix::zeros(idx.len(), 3);
    for (r, &i) in idx.iter().enumerate() {
        x.row_mut(r).copy_from_slice(&obs[i]);
    }
    x
}

/// Logit gradient of `−mean(min(ρÂ, clip(ρ)Â)) − c_H·H`.
///
/// `eps = None` drops the ratio entirely, giving the plain policy-gradient
/// loss `−mean(log π(a)·Â)` used by A2C; at `θ = θ_old` both have the same
/// gradient.
pub(crate) fn policy_batch_grad(
    logits: &Matrix,
    actions: &[usize],
    old_log_probs: &[f64],
    adv: &[f64],
    eps: Option<f64>,
    entropy_coef: f64,
) -> BatchGrad {
    let (b, k) = logits.shape();
    let inv = 1.0 / b as f64;
    let mut dlogits = Matrix::zeros(b, k);
    let mut policy_loss = 0.0;
    let mut entropy = 0.0;
    let mut clipped = 0usize;
    let mut max_dev: f64 = 0.0;
    for i in 0..b {
        let logp = log_softmax_row(logits.row(i));
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let h: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        entropy += h;
        let a = actions[i];
        let (coef, loss_i) = match eps {
            Some(eps) => {
                let ratio = (logp[a] - old_log_probs[i]).exp();
                max_dev = max_dev.max((ratio - 1.0).abs());
                let unclipped = ratio * adv[i];
                let term = clipped_term(ratio, adv[i], eps);
                if (ratio - 1.0).abs() > eps {
                    clipped += 1;
                }
                // gradient flows only through the unclipped branch when it is the minimum
                let active = unclipped <= term;
                (if active { adv[i] * ratio } else { 0.0 }, -term)
            }
            None => (adv[i], -logp[a] * adv[i]),
        };
        policy_loss += loss_i;
        let row = dlogits.row_mut(i);
        for j in 0..k {
            let onehot = if j == a { 1.0 } else { 0.0 };
            let pg = -coef * (onehot - probs[j]);
            let ent = entropy_coef * probs[j] * (logp[j] + h);
            row[j] = (pg + ent) * inv;
        }
    }
    BatchGrad {
        dlogits,
        policy_loss: policy_loss * inv,
        entropy: entropy * inv,
        clip_fraction: clipped as f64 * inv,
        max_ratio_dev: max_dev,
    }
}

pub(crate) struct ActorCritic<'a> {
    pub policy: &'a mut Mlp,
    pub value: &'a mut Mlp,
    pub policy_opt: &'a mut AdamState,
    pub value_opt: &'a mut AdamState,
}

/// Mean of `(ρ − 1) − ln ρ` over the buffer, a non-negative KL estimate.
pub fn buffer_kl(policy: &Mlp, buffer: &RolloutBuffer) -> Result<f64> {
    let idx: Vec<usize> = (0..buffer.len()).collect();
    let logits = policy.predict(&obs_matrix(&buffer.obs, &idx))?;
    let mut kl = 0.0;
    for i in 0..buffer.len() {
        let lr = log_softmax_row(logits.row(i))[buffer.actions[i]] - buffer.log_probs[i];
        kl += lr.exp() - 1.0 - lr;
    }
    Ok(kl / buffer.len().max(1) as f64)
}

/// Shared minibatch loop for PPO (`eps = Some`) and A2C (`eps = None`).
pub(crate) fn actor_critic_update(
    nets: ActorCritic<'_>,
    buffer: &RolloutBuffer,
    hyper: &PpoHyper,
    epochs: usize,
    eps: Option<f64>,
    rng: &mut RngStream,
) -> Result<(UpdateMetrics, Vec<f64>)> {
    if buffer.is_empty() {
        return Err(Error::param("cannot update from an empty buffer"));
    }
    let (adv_raw, returns) = compute_gae(
        &buffer.rewards,
        &buffer.values,
        &buffer.dones,
        buffer.last_value,
        hyper.gamma,
        hyper.xi_gae,
    );
    let mut metrics = UpdateMetrics::default();
    let mut kl_per_epoch = Vec::with_capacity(epochs);
    let mut n_batches = 0usize;
    let mut first = true;
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    'outer: for _ in 0..epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(hyper.batch) {
            let x = obs_matrix(&buffer.obs, chunk);
            let actions: Vec<usize> = chunk.iter().map(|&i| buffer.actions[i]).collect();
            let old: Vec<f64> = chunk.iter().map(|&i| buffer.log_probs[i]).collect();
            let adv = normalize(&chunk.iter().map(|&i| adv_raw[i]).collect::<Vec<_>>());
            let target =
                Matrix::from_vec(chunk.len(), 1, chunk.iter().map(|&i| returns[i]).collect())?;

            let (logits, pcache) = nets.policy.forward(&x)?;
            let g = policy_batch_grad(&logits, &actions, &old, &adv, eps, hyper.entropy_coef);
            let (v, vcache) = nets.value.forward(&x)?;
            let (vloss, mut dv) = mse_loss(&v, &target)?;
            if !(g.policy_loss.is_finite() && vloss.is_finite() && g.entropy.is_finite()) {
                metrics.aborted = true;
                break 'outer;
            }
            if first {
                metrics.first_ratio_dev = g.max_ratio_dev;
                metrics.first_policy_loss = g.policy_loss;
                first = false;
            }
            dv.scale_mut(hyper.value_coef);
            let mut pgrad = nets.policy.backward(&pcache, &g.dlogits)?;
            let mut vgrad = nets.value.backward(&vcache, &dv)?;
            if !all_finite(&pgrad) || !all_finite(&vgrad) {
                metrics.aborted = true;
                break 'outer;
            }
            clip_global_norm(&mut pgrad, hyper.max_grad_norm);
            clip_global_norm(&mut vgrad, hyper.max_grad_norm);
            nets.policy_opt.step(nets.policy, &pgrad)?;
            nets.value_opt.step(nets.value, &vgrad)?;
            metrics.policy_loss += g.policy_loss;
            metrics.value_loss += vloss;
            metrics.entropy += g.entropy;
            metrics.clip_fraction += g.clip_fraction;
            n_batches += 1;
        }
        kl_per_epoch.push(buffer_kl(nets.policy, buffer)?);
    }
    if n_batches > 0 {
        let k = n_batches as f64;
        metrics.policy_loss /= k;
        metrics.value_loss /= k;
        metrics.entropy /= k;
        metrics.clip_fraction /= k;
    }
    metrics.approx_kl = kl_per_epoch.last().copied().unwrap_or(0.0);
    Ok((metrics, kl_per_epoch))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct double sum `Σ_l (γξ)^l δ_{t+l}` within the episode.
    fn brute_force(
        rewards: &[f64],
        values: &[f64],
        dones: &[bool],
        last: f64,
        gamma: f64,
        xi: f64,
    ) -> Vec<f64> {
        let n = rewards.len();
        let delta = |t: usize| {
            let next = if dones[t] {
                0.0
            } else if t + 1 < n {
                values[t + 1]
            } else {
                last
            };
            rewards[t] + gamma * next - values[t]
        };
        (0..n)
            .map(|t| {
                let mut sum = 0.0;
                let mut w = 1.0;
                for l in t..n {
                    sum += w * delta(l);
                    if dones[l] {
                        break;
                    }
                    w *= gamma * xi;
                }
                sum
            })
            .collect()
    }

    #[test]
    fn gae_matches_double_sum() {
        let mut rng = RngStream::new(4, 0);
        for _ in 0..50 {
            let n = 15;
            let r: Vec<f64> = (0..n).map(|_| rng.uniform_range(-3.0, 1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
            let d: Vec<bool> = (0..n).map(|t| t % 5 == 4).collect();
            let (adv, ret) = compute_gae(&r, &v, &d, 0.7, 0.99, 0.95);
            let want = brute_force(&r, &v, &d, 0.7, 0.99, 0.95);
            for t in 0..n {
                assert!((adv[t] - want[t]).abs() < 1e-10);
                assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gae_special_cases() {
        let r = [1.0, -2.0, 0.5, 3.0, -1.0];
        let v = [0.3, -0.1, 0.8, 0.2, 0.4];
        let d = [false, false, false, false, true];
        let (a0, _) = compute_gae(&r, &v, &d, 9.0, 0.9, 0.0);
        for t in 0..5 {
            let next = if t == 4 { 0.0 } else { v[t + 1] };
            assert_eq!(a0[t], r[t] + 0.9 * next - v[t]);
        }
        let (a1, _) = compute_gae(&r, &v, &d, 9.0, 0.9, 1.0);
        for t in 0..5 {
            let disc: f64 = (t..5).map(|l| 0.9f64.powi((l - t) as i32) * r[l]).sum();
            assert!((a1[t] - (disc - v[t])).abs() < 1e-10);
        }
        let (z, _) = compute_gae(&[0.0; 5], &[0.0; 5], &d, 0.0, 0.99, 0.95);
        assert!(z.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn clip_arithmetic() {
        assert!((clipped_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(clipped_term(0.5, 1.0, 0.2), 0.5);
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        for &r in &[0.1, 0.9, 1.0, 1.3, 4.0] {
            for &a in &[-2.0, 0.5] {
                let eff = clipped_term(r, a, 0.2) / a;
                assert!(eff <= 1.2 + 1e-12 || eff == r);
            }
        }
    }

    #[test]
    fn ppo_and_pg_gradients_agree_at_old_policy() {
        let mut rng = RngStream::new(1, 0);
        let logits = Matrix::from_vec(
            4,
            3,
            (0..12).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let actions = [0, 2, 1, 2];
        let old: Vec<f64> = (0..4)
            .map(|i| log_softmax_row(logits.row(i))[actions[i]])
            .collect();
        let adv = [0.5, -1.0, 2.0, 0.1];
        let ppo = policy_batch_grad(&logits, &actions, &old, &adv, Some(f64::INFINITY), 0.0);
        let pg = policy_batch_grad(&logits, &actions, &old, &adv, None, 0.0);
        assert!(ppo.dlogits.max_abs_diff(&pg.dlogits).unwrap() < 1e-14);
        assert!(ppo.max_ratio_dev < 1e-12);
        let zero = policy_batch_grad(&logits, &actions, &old, &[0.0; 4], None, 0.0);
        assert!(zero.dlogits.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn policy_gradient_matches_finite_difference() {
        let mut rng = RngStream::new(2, 0);
        let logits = Matrix::from_vec(
            3,
            5,
            (0..15).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let actions = [4, 0, 2];
        let old = [-1.2, -1.9, -1.4];
        let adv = [1.0, -0.4, 0.7];
        let loss = |z: &Matrix| {
            let g = policy_batch_grad(z, &actions, &old, &adv, Some(0.2), 0.05);
            g.policy_loss - 0.05 * g.entropy
        };
        let g = policy_batch_grad(&logits, &actions, &old, &adv, Some(0.2), 0.05);
        for idx in 0..15 {
            let mut up = logits.clone();
            up.data_mut()[idx] += 1e-6;
            let mut dn = logits.clone();
            dn.data_mut()[idx] -= 1e-6;
            let num = (loss(&up) - loss(&dn)) / 2e-6;
            assert!(
                (num - g.dlogits.data()[idx]).abs() < 1e-6,
                "{idx}: {num} vs {}",
                g.dlogits.data()[idx]
            );
        }
    }
}
