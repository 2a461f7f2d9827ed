//! Clipped-surrogate update over the valid transitions of a rollout buffer.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::policy::{gaussian_entropy, gaussian_log_prob, Adam, PolicyParams, LOG_STD_MAX, LOG_STD_MIN};
use crate::trainer::rollout::RolloutBuffer;
use crate::trainer::{compute_gae, TrainConfig, ValueNormStats};

const ADV_EPS: f64 = 1e-8;

/// One minibatch of flattened transitions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Minibatch {
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Critic regression targets in normalized value space.
    pub targets: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }

    fn push(&mut self, obs: &[f64], action: &[f64], old_lp: f64, adv: f64, target: f64) {
        self.obs.extend_from_slice(obs);
        self.actions.extend_from_slice(action);
        self.old_log_probs.push(old_lp);
        self.advantages.push(adv);
        self.targets.push(target);
    }

    fn dump(&self, obs_len: usize) -> String {
        let mut s = String::from("row,old_log_prob,advantage,target,action...,obs...\n");
        for k in 0..self.len() {
            let fields: Vec<String> = [self.old_log_probs[k], self.advantages[k], self.targets[k]]
                .iter()
                .chain(&self.actions[k * ACTION_DIM..(k + 1) * ACTION_DIM])
                .chain(&self.obs[k * obs_len..(k + 1) * obs_len])
                .map(|v| format!("{v:e}"))
                .collect();
            s.push_str(&format!("{k},{}\n", fields.join(",")));
        }
        s
    }
}

/// Loss terms of one minibatch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// PPO loss and its exact gradient with respect to every parameter.
///
/// `loss = −mean(min(ρA, clip(ρ, 1−ε, 1+ε)A)) + c_v·mean((V − target)²) − c_ent·H`
pub fn ppo_loss_and_grad(
    params: &PolicyParams,
    mb: &Minibatch,
    clip_eps: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> Result<(LossParts, Vec<f64>)> {
    let n = mb.len();
    params.check_obs(&mb.obs, n)?;
    let mut grad = vec![0.0; params.n_params()];
    if n == 0 {
        return Ok((LossParts::default(), grad));
    }
    let inv_n = 1.0 / n as f64;
    let log_std = params.log_std();
    let std = log_std.map(f64::exp);

    let actor_cache = params.actor.forward_cached(&params.theta, &mb.obs, n);
    let means = actor_cache.output();
    let mut d_mean = vec![0.0; n * ACTION_DIM];
    let mut d_log_std = [0.0; ACTION_DIM];
    let (mut policy_loss, mut kl, mut clipped) = (0.0, 0.0, 0usize);
    for k in 0..n {
        let a = &mb.actions[k * ACTION_DIM..(k + 1) * ACTION_DIM];
        let mu = &means[k * ACTION_DIM..(k + 1) * ACTION_DIM];
        let logp = gaussian_log_prob(a, mu, &log_std);
        let log_ratio = logp - mb.old_log_probs[k];
        let ratio = log_ratio.exp();
        let adv = mb.advantages[k];
        let surr1 = ratio * adv;
        let surr2 = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
        policy_loss -= surr1.min(surr2);
        kl += (ratio - 1.0) - log_ratio;
        if (ratio - 1.0).abs() > clip_eps {
            clipped += 1;
        }
        if surr1 <= surr2 {
            let d_logp = -inv_n * ratio * adv;
            for j in 0..ACTION_DIM {
                let z = (a[j] - mu[j]) / std[j];
                d_mean[k * ACTION_DIM + j] = d_logp * z / std[j];
                d_log_std[j] += d_logp * (z * z - 1.0);
            }
        }
    }
    params.actor.backward(&params.theta, &actor_cache, &d_mean, &mut grad);

    let critic_cache = params.critic.forward_cached(&params.theta, &mb.obs, n);
    let values = critic_cache.output();
    let mut d_value = vec![0.0; n];
    let mut value_loss = 0.0;
    for k in 0..n {
        let err = values[k] - mb.targets[k];
        value_loss += err * err;
        d_value[k] = value_coef * 2.0 * inv_n * err;
    }
    params.critic.backward(&params.theta, &critic_cache, &d_value, &mut grad);

    let entropy = gaussian_entropy(&log_std);
    let o = params.log_std_offset();
    for j in 0..ACTION_DIM {
        let raw = params.theta[o + j];
        if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
            grad[o + j] += d_log_std[j] - entropy_coef;
        }
    }

    let policy = policy_loss * inv_n;
    let value = value_loss * inv_n;
    let parts = LossParts {
        policy,
        value,
        entropy,
        total: policy + value_coef * value - entropy_coef * entropy,
        approx_kl: kl * inv_n,
        clip_fraction: clipped as f64 * inv_n,
    };
    Ok((parts, grad))
}

/// Scales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before scaling. A non-positive or infinite `max_norm` disables clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && max_norm.is_finite() && norm > max_norm {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Per-update training diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateMetrics {
    /// True when every transition was masked and no update happened.
    pub skipped: bool,
    pub valid_transitions: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// Mean of the returns used as critic targets (valid transitions).
    pub mean_return: f64,
    pub explained_variance: f64,
}

/// Advantages and returns for every transition of the buffer, computed per
/// (env, drone) sequence with values denormalized by `stats`.
///
/// A transition is cut from its successor when it is flagged done or when the
/// successor is masked.
pub fn buffer_advantages(buf: &RolloutBuffer, stats: &ValueNormStats, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let total = buf.len();
    let (mut adv, mut ret) = (vec![0.0; total], vec![0.0; total]);
    let t_len = buf.n_steps;
    let (mut r, mut v, mut d) = (vec![0.0; t_len], vec![0.0; t_len], vec![false; t_len]);
    for e in 0..buf.n_envs {
        for i in 0..buf.n_drones {
            for t in 0..t_len {
                let k = buf.index(t, e, i);
                r[t] = buf.rewards[k];
                v[t] = stats.denormalize(buf.values[k]);
                let next_masked = t + 1 < t_len && !buf.masks[buf.index(t + 1, e, i)];
                d[t] = buf.dones[k] || next_masked;
            }
            let boot = stats.denormalize(buf.bootstrap[e * buf.n_drones + i]);
            let (a, rt) = compute_gae(&r, &v, &d, boot, gamma, lambda)?;
            for t in 0..t_len {
                let k = buf.index(t, e, i);
                adv[k] = a[t];
                ret[k] = rt[t];
            }
        }
    }
    Ok((adv, ret))
}

/// Runs `cfg.epochs` epochs of minibatch PPO on the valid transitions of
/// `buf`, updating `params`, the optimizer and the value-normalization
/// statistics in place.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    adam: &mut Adam,
    buf: &RolloutBuffer,
    stats: &mut ValueNormStats,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateMetrics> {
    let (adv, returns) = buffer_advantages(buf, stats, cfg.gamma, cfg.gae_lambda)?;
    let mut valid: Vec<usize> = (0..buf.len()).filter(|&k| buf.masks[k]).collect();
    if valid.is_empty() {
        log::warn!("every transition in the batch is masked; update skipped");
        return Ok(UpdateMetrics {
            skipped: true,
            ..Default::default()
        });
    }
    let n_valid = valid.len() as f64;

    let valid_returns: Vec<f64> = valid.iter().map(|&k| returns[k]).collect();
    let old_values: Vec<f64> = valid.iter().map(|&k| stats.denormalize(buf.values[k])).collect();
    stats.update(&valid_returns);

    let adv_mean = valid.iter().map(|&k| adv[k]).sum::<f64>() / n_valid;
    let adv_var = valid.iter().map(|&k| (adv[k] - adv_mean).powi(2)).sum::<f64>() / n_valid;
    let adv_std = adv_var.sqrt();

    let n_mb = cfg.minibatches.min(valid.len()).max(1);
    let obs_len = buf.obs_len;
    let mut sums = UpdateMetrics::default();
    let mut n_steps = 0usize;
    for _ in 0..cfg.epochs {
        valid.shuffle(rng);
        for m in 0..n_mb {
            let lo = m * valid.len() / n_mb;
            let hi = (m + 1) * valid.len() / n_mb;
            let mut mb = Minibatch::default();
            for &k in &valid[lo..hi] {
                mb.push(
                    buf.obs_row(k),
                    buf.action(k),
                    buf.log_probs[k],
                    (adv[k] - adv_mean) / (adv_std + ADV_EPS),
                    stats.normalize(returns[k]),
                );
            }
            let (parts, mut grad) = ppo_loss_and_grad(params, &mb, cfg.clip_eps, cfg.value_coef, cfg.entropy_coef)?;
            if !parts.total.is_finite() {
                return Err(Error::Halted {
                    reason: format!("non-finite loss (policy {}, value {})", parts.policy, parts.value),
                    dump: mb.dump(obs_len),
                });
            }
            sums.grad_norm += clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.update(&mut params.theta, &grad);
            params.clamp_log_std();
            sums.policy_loss += parts.policy;
            sums.value_loss += parts.value;
            sums.entropy += parts.entropy;
            sums.approx_kl += parts.approx_kl;
            sums.clip_fraction += parts.clip_fraction;
            n_steps += 1;
        }
    }
    let s = 1.0 / n_steps as f64;
    let mean_return = valid_returns.iter().sum::<f64>() / n_valid;
    let ret_var = valid_returns.iter().map(|r| (r - mean_return).powi(2)).sum::<f64>() / n_valid;
    let resid_var = valid_returns
        .iter()
        .zip(&old_values)
        .map(|(r, v)| (r - v).powi(2))
        .sum::<f64>()
        / n_valid;
    Ok(UpdateMetrics {
        skipped: false,
        valid_transitions: valid.len(),
        policy_loss: sums.policy_loss * s,
        value_loss: sums.value_loss * s,
        entropy: sums.entropy * s,
        approx_kl: sums.approx_kl * s,
        clip_fraction: sums.clip_fraction * s,
        grad_norm: sums.grad_norm * s,
        mean_return,
        explained_variance: if ret_var > 0.0 { 1.0 - resid_var / ret_var } else { 0.0 },
    })
}
