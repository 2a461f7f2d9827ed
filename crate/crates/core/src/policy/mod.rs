//! Shared actor and critic networks.
//!
//! Both networks are two hidden layers of tanh units. The actor ends in a
//! tanh layer producing the mean of a diagonal Gaussian over the four
//! normalized actions, with state-independent learnable log standard
//! deviations; the critic ends in a single linear unit whose output lives in
//! the normalized value space.
//!
//! All parameters live in one flat vector: actor, then critic, then the four
//! log standard deviations.

pub mod adam;
pub mod checkpoint;
pub mod mlp;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use mlp::{Activation, Mlp, MlpCache};

use crate::env::{Action, ACTION_DIM};
use crate::error::{Error, Result};

pub const HIDDEN_UNITS: usize = 128;
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
const ACTOR_HEAD_GAIN: f64 = 0.01;
const CRITIC_HEAD_GAIN: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    obs_len: usize,
    hidden: usize,
    pub actor: Mlp,
    pub critic: Mlp,
    /// Flat parameter vector.
    pub theta: Vec<f64>,
}

impl PolicyParams {
    /// All-zero parameters (zero log standard deviations).
    pub fn zeros(obs_len: usize, hidden: usize) -> Self {
        let actor = Mlp::new(
            vec![obs_len, hidden, hidden, ACTION_DIM],
            0,
            Activation::Tanh,
            Activation::Tanh,
        );
        let critic = Mlp::new(
            vec![obs_len, hidden, hidden, 1],
            actor.n_params(),
            Activation::Tanh,
            Activation::Identity,
        );
        let n = actor.n_params() + critic.n_params() + ACTION_DIM;
        PolicyParams {
            obs_len,
            hidden,
            actor,
            critic,
            theta: vec![0.0; n],
        }
    }

    /// Orthogonally initialized networks, log standard deviations at zero.
    pub fn new<R: Rng + ?Sized>(obs_len: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(obs_len, hidden);
        p.actor
            .init_orthogonal(&mut p.theta, &[HIDDEN_GAIN, HIDDEN_GAIN, ACTOR_HEAD_GAIN], rng);
        p.critic
            .init_orthogonal(&mut p.theta, &[HIDDEN_GAIN, HIDDEN_GAIN, CRITIC_HEAD_GAIN], rng);
        p
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn log_std_offset(&self) -> usize {
        self.theta.len() - ACTION_DIM
    }

    /// Learnable log standard deviations, clamped to the supported range.
    pub fn log_std(&self) -> Action {
        let o = self.log_std_offset();
        let mut out = [0.0; ACTION_DIM];
        for (k, v) in out.iter_mut().enumerate() {
            *v = self.theta[o + k].clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        out
    }

    pub fn clamp_log_std(&mut self) {
        let o = self.log_std_offset();
        for v in &mut self.theta[o..] {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// Replaces the hidden activation of both networks (used to test the
    /// gradient code against closed forms on affine networks).
    pub fn set_hidden_activation(&mut self, act: Activation) {
        self.actor.hidden = act;
        self.critic.hidden = act;
    }

    pub fn check_obs(&self, obs: &[f64], batch: usize) -> Result<()> {
        if obs.len() != batch * self.obs_len {
            return Err(Error::Shape {
                expected: batch * self.obs_len,
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Mean action and log standard deviations for one observation.
    pub fn actor_forward(&self, obs: &[f64]) -> Result<(Action, Action)> {
        self.check_obs(obs, 1)?;
        let out = self.actor.forward(&self.theta, obs, 1);
        let mut mean = [0.0; ACTION_DIM];
        mean.copy_from_slice(&out);
        Ok((mean, self.log_std()))
    }

    /// Mean actions for a row-major batch of observations.
    pub fn actor_mean_batch(&self, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_obs(obs, batch)?;
        Ok(self.actor.forward(&self.theta, obs, batch))
    }

    /// Critic output (normalized value space) for one observation.
    pub fn critic_forward(&self, obs: &[f64]) -> Result<f64> {
        self.check_obs(obs, 1)?;
        Ok(self.critic.forward(&self.theta, obs, 1)[0])
    }

    pub fn critic_batch(&self, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_obs(obs, batch)?;
        Ok(self.critic.forward(&self.theta, obs, batch))
    }
}

/// Log-density of `action` under the diagonal Gaussian `N(mean, exp(log_std)²)`.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Entropy of the diagonal Gaussian policy.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (1.0 + (2.0 * PI).ln())).sum()
}

/// Draws an unclipped action and its log-density. Clip before handing it to
/// the environment.
pub fn sample_action<R: Rng + ?Sized>(mean: &Action, log_std: &Action, rng: &mut R) -> (Action, f64) {
    let mut a = [0.0; ACTION_DIM];
    for k in 0..ACTION_DIM {
        let z: f64 = rng.sample(StandardNormal);
        let ls = log_std[k].clamp(LOG_STD_MIN, LOG_STD_MAX);
        a[k] = mean[k] + ls.exp() * z;
    }
    let ls = log_std.map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX));
    (a, gaussian_log_prob(&a, mean, &ls))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_outputs() {
        let p = PolicyParams::zeros(25, HIDDEN_UNITS);
        let obs = vec![0.3; 25];
        let (mean, ls) = p.actor_forward(&obs).unwrap();
        assert_eq!(mean, [0.0; 4]);
        assert_eq!(ls, [0.0; 4]);
        assert_eq!(p.critic_forward(&obs).unwrap(), 0.0);
    }

    #[test]
    fn mean_is_inside_unit_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = PolicyParams::new(18, HIDDEN_UNITS, &mut rng);
        for v in &mut p.theta {
            *v *= 50.0;
        }
        let obs: Vec<f64> = (0..18).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (mean, _) = p.actor_forward(&obs).unwrap();
        assert!(mean.iter().all(|m| m.abs() <= 1.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = PolicyParams::zeros(18, 8);
        assert!(matches!(p.actor_forward(&[0.0; 17]), Err(Error::Shape { .. })));
        assert!(matches!(p.critic_forward(&[0.0; 19]), Err(Error::Shape { .. })));
    }

    #[test]
    fn critic_ignores_actor_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = PolicyParams::new(18, 16, &mut rng);
        let obs: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v0 = p.critic_forward(&obs).unwrap();
        let n_actor = p.actor.n_params();
        for v in &mut p.theta[..n_actor] {
            *v += 0.5;
        }
        assert_eq!(p.critic_forward(&obs).unwrap(), v0);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = PolicyParams::new(18, HIDDEN_UNITS, &mut rng);
        let obs: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = p.actor_forward(&obs).unwrap();
        let b = p.actor_forward(&obs).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            p.critic_forward(&obs).unwrap().to_bits(),
            p.critic_forward(&obs).unwrap().to_bits()
        );
    }

    #[test]
    fn log_prob_of_mean_at_unit_std() {
        let lp = gaussian_log_prob(&[0.2; 4], &[0.2; 4], &[0.0; 4]);
        assert!((lp - (-2.0 * (2.0 * PI).ln())).abs() < 1e-12);
        assert!((lp + 3.6758).abs() < 1e-4);
    }

    #[test]
    fn tiny_spread_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mean = [0.1, -0.2, 0.3, -0.4];
        let (a, lp) = sample_action(&mean, &[-30.0; 4], &mut rng);
        for k in 0..4 {
            assert!((a[k] - mean[k]).abs() < 1e-7);
        }
        assert!(lp.is_finite());
    }

    #[test]
    fn sample_mean_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mean = [0.5, -0.25, 0.0, 0.75];
        let n = 100_000;
        let mut acc = [0.0; 4];
        for _ in 0..n {
            let (a, _) = sample_action(&mean, &[0.0; 4], &mut rng);
            for k in 0..4 {
                acc[k] += a[k];
            }
        }
        let bound = 3.0 / (n as f64).sqrt();
        for k in 0..4 {
            assert!((acc[k] / n as f64 - mean[k]).abs() < bound);
        }
    }
}
