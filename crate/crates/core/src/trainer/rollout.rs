//! Experience collection over a set of environments sharing one policy.
//!
//! The buffer is indexed `[step][env][drone]`. Each transition carries a
//! validity mask: a drone's transitions are valid up to and including the
//! step on which it was terminated, and invalid afterwards until its
//! episode resets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{Action, CollisionTracker, EnvConfig, RaceEnv, StepOutcome, ACTION_DIM};
use crate::error::{Error, Result};
use crate::policy::{sample_action, PolicyParams};
use crate::seeding::derive_seed;
use crate::track::TrackSpec;
use crate::trainer::ValueNormStats;

const EPISODE_STREAM: u64 = 1;
const ACTION_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBuffer {
    pub n_steps: usize,
    pub n_envs: usize,
    pub n_drones: usize,
    pub obs_len: usize,
    pub obs: Vec<f64>,
    /// Unclipped sampled actions.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Critic outputs (normalized value space).
    pub values: Vec<f64>,
    pub masks: Vec<bool>,
    pub dones: Vec<bool>,
    /// Critic outputs for the observations following the last step, `[env][drone]`.
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_steps: usize, n_envs: usize, n_drones: usize, obs_len: usize) -> Self {
        let n = n_steps * n_envs * n_drones;
        RolloutBuffer {
            n_steps,
            n_envs,
            n_drones,
            obs_len,
            obs: vec![0.0; n * obs_len],
            actions: vec![0.0; n * ACTION_DIM],
            log_probs: vec![0.0; n],
            rewards: vec![0.0; n],
            values: vec![0.0; n],
            masks: vec![false; n],
            dones: vec![false; n],
            bootstrap: vec![0.0; n_envs * n_drones],
        }
    }

    pub fn len(&self) -> usize {
        self.n_steps * self.n_envs * self.n_drones
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, step: usize, env: usize, drone: usize) -> usize {
        (step * self.n_envs + env) * self.n_drones + drone
    }

    pub fn obs_row(&self, k: usize) -> &[f64] {
        &self.obs[k * self.obs_len..(k + 1) * self.obs_len]
    }

    pub fn action(&self, k: usize) -> &[f64] {
        &self.actions[k * ACTION_DIM..(k + 1) * ACTION_DIM]
    }

    pub fn valid_count(&self) -> usize {
        self.masks.iter().filter(|m| **m).count()
    }
}

/// Summary of one finished episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub length: usize,
    /// Undiscounted return, averaged over drones.
    pub mean_return: f64,
    /// Waypoints passed, averaged over drones.
    pub mean_waypoints: f64,
    /// Fewest laps completed by any drone.
    pub min_laps: usize,
    pub collisions: usize,
    pub boundary_terminations: usize,
}

struct EnvSlot {
    env: RaceEnv,
    obs: Vec<Vec<f64>>,
    alive: Vec<bool>,
    rng: ChaCha8Rng,
    episode: u64,
    index: u64,
    returns: Vec<f64>,
    collisions: CollisionTracker,
}

impl EnvSlot {
    fn reset(&mut self, base_seed: u64) -> Result<()> {
        let seed = derive_seed(base_seed, EPISODE_STREAM, (self.index << 32) | self.episode);
        self.episode += 1;
        self.obs = self.env.reset(seed)?;
        self.alive.fill(true);
        self.returns.fill(0.0);
        self.collisions = CollisionTracker::new(self.alive.len());
        Ok(())
    }

    fn record(&self) -> EpisodeRecord {
        let st = self.env.state();
        let n = st.drones.len() as f64;
        let n_wp = st.waypoints.len();
        EpisodeRecord {
            length: st.t,
            mean_return: self.returns.iter().sum::<f64>() / n,
            mean_waypoints: st.drones.iter().map(|d| d.progress as f64).sum::<f64>() / n,
            min_laps: st.drones.iter().map(|d| d.laps_completed(n_wp)).min().unwrap_or(0),
            collisions: self.collisions.events,
            boundary_terminations: st.drones.iter().filter(|d| d.terminated).count(),
        }
    }
}

/// A fixed set of environments stepped in lockstep.
pub struct VecEnv {
    slots: Vec<EnvSlot>,
    base_seed: u64,
    n_drones: usize,
    obs_len: usize,
    pool: Option<rayon::ThreadPool>,
    /// Environments reset after a dynamics divergence.
    pub divergences: u64,
}

impl VecEnv {
    pub fn new(track: &TrackSpec, cfg: &EnvConfig, n_envs: usize, base_seed: u64, workers: usize) -> Result<Self> {
        if n_envs == 0 {
            return Err(Error::config("trainer.n_envs: must be >= 1"));
        }
        let n = cfg.n_drones;
        let mut slots = Vec::with_capacity(n_envs);
        for e in 0..n_envs {
            let mut slot = EnvSlot {
                env: RaceEnv::new(track.clone(), cfg.clone())?,
                obs: Vec::new(),
                alive: vec![true; n],
                rng: ChaCha8Rng::seed_from_u64(derive_seed(base_seed, ACTION_STREAM, e as u64)),
                episode: 0,
                index: e as u64,
                returns: vec![0.0; n],
                collisions: CollisionTracker::new(n),
            };
            slot.reset(base_seed)?;
            slots.push(slot);
        }
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(VecEnv {
            slots,
            base_seed,
            n_drones: n,
            obs_len: cfg.layout().len(),
            pool,
            divergences: 0,
        })
    }

    pub fn n_envs(&self) -> usize {
        self.slots.len()
    }

    pub fn n_drones(&self) -> usize {
        self.n_drones
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    fn gather_obs(&self, out: &mut [f64]) {
        let mut k = 0;
        for slot in &self.slots {
            for o in &slot.obs {
                out[k * self.obs_len..(k + 1) * self.obs_len].copy_from_slice(o);
                k += 1;
            }
        }
    }

    fn step_all(&mut self, actions: &[Vec<Action>]) -> Vec<Result<StepOutcome>> {
        let run = |(slot, a): (&mut EnvSlot, &Vec<Action>)| slot.env.step(a);
        match &self.pool {
            Some(pool) => pool.install(|| self.slots.par_iter_mut().zip(actions).map(run).collect()),
            None => self.slots.iter_mut().zip(actions).map(run).collect(),
        }
    }
}

/// Steps every environment `n_steps` times under the frozen `policy`,
/// resetting finished episodes in place.
pub fn collect_rollouts(
    policy: &PolicyParams,
    stats: &ValueNormStats,
    venv: &mut VecEnv,
    n_steps: usize,
    gamma: f64,
) -> Result<(RolloutBuffer, Vec<EpisodeRecord>)> {
    let (n_envs, n, obs_len) = (venv.n_envs(), venv.n_drones, venv.obs_len);
    if policy.obs_len() != obs_len {
        return Err(Error::Shape {
            expected: obs_len,
            got: policy.obs_len(),
        });
    }
    let rows = n_envs * n;
    let mut buf = RolloutBuffer::new(n_steps, n_envs, n, obs_len);
    let mut episodes = Vec::new();
    let log_std = policy.log_std();
    let mut obs = vec![0.0; rows * obs_len];

    for t in 0..n_steps {
        venv.gather_obs(&mut obs);
        let means = policy.actor_mean_batch(&obs, rows)?;
        let values = policy.critic_batch(&obs, rows)?;
        let base = buf.index(t, 0, 0);
        buf.obs[base * obs_len..(base + rows) * obs_len].copy_from_slice(&obs);
        buf.values[base..base + rows].copy_from_slice(&values);

        let mut actions: Vec<Vec<Action>> = Vec::with_capacity(n_envs);
        for (e, slot) in venv.slots.iter_mut().enumerate() {
            let mut env_actions = Vec::with_capacity(n);
            for i in 0..n {
                let k = buf.index(t, e, i);
                let mut mean = [0.0; ACTION_DIM];
                mean.copy_from_slice(&means[(e * n + i) * ACTION_DIM..(e * n + i + 1) * ACTION_DIM]);
                let (a, lp) = sample_action(&mean, &log_std, &mut slot.rng);
                buf.actions[k * ACTION_DIM..(k + 1) * ACTION_DIM].copy_from_slice(&a);
                buf.log_probs[k] = lp;
                buf.masks[k] = slot.alive[i];
                env_actions.push(a);
            }
            actions.push(env_actions);
        }

        let outcomes = venv.step_all(&actions);
        let base_seed = venv.base_seed;
        for (e, outcome) in outcomes.into_iter().enumerate() {
            let slot = &mut venv.slots[e];
            let out = match outcome {
                Ok(out) => out,
                Err(Error::Diverged { drone }) => {
                    log::warn!("env {e}: dynamics diverged for drone {drone}; resetting");
                    venv.divergences += 1;
                    for i in 0..n {
                        let k = buf.index(t, e, i);
                        buf.masks[k] = false;
                        buf.dones[k] = true;
                        buf.rewards[k] = 0.0;
                    }
                    slot.reset(base_seed)?;
                    continue;
                }
                Err(err) => return Err(err),
            };

            let mut bootstrap = vec![0.0; n];
            if out.done && out.truncated {
                let alive: Vec<usize> = (0..n).filter(|&i| !out.terminated[i]).collect();
                let flat: Vec<f64> = alive.iter().flat_map(|&i| out.obs[i].iter().copied()).collect();
                let v = policy.critic_batch(&flat, alive.len())?;
                for (&i, v) in alive.iter().zip(v) {
                    bootstrap[i] = gamma * stats.denormalize(v);
                }
            }
            for i in 0..n {
                let k = buf.index(t, e, i);
                buf.rewards[k] = out.rewards[i] + bootstrap[i];
                buf.dones[k] = out.done || out.terminated[i];
                if slot.alive[i] {
                    slot.returns[i] += out.rewards[i];
                }
            }
            slot.collisions.observe(&out.info);
            slot.alive.copy_from_slice(&out.masks);
            let done = out.done;
            slot.obs = out.obs;
            if done {
                episodes.push(slot.record());
                slot.reset(base_seed)?;
            }
        }
    }

    venv.gather_obs(&mut obs);
    buf.bootstrap = policy.critic_batch(&obs, rows)?;
    Ok((buf, episodes))
}
