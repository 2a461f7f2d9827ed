//! Masked independent PPO with a shared policy and value normalization.

pub mod gae;
pub mod ppo;
pub mod rollout;
pub mod value_norm;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gae::compute_gae;
pub use ppo::{ppo_loss_and_grad, ppo_update, LossParts, Minibatch, UpdateMetrics};
pub use rollout::{collect_rollouts, EpisodeRecord, RolloutBuffer, VecEnv};
pub use value_norm::{ValueNormStats, SIGMA_FLOOR};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::policy::{Adam, Checkpoint, PolicyParams, HIDDEN_UNITS};
use crate::seeding::derive_seed;
use crate::track::TrackSpec;

const INIT_STREAM: u64 = 10;
const UPDATE_STREAM: u64 = 11;

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "policy.ckpt";
pub const HALT_DUMP_FILE: &str = "halt_minibatch.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Parallel environments E.
    pub n_envs: usize,
    /// Control steps per environment per update.
    pub rollout_steps: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Training budget in environment steps (each steps all N drones).
    pub total_env_steps: u64,
    /// Write a numbered checkpoint every this many updates (0 disables).
    pub checkpoint_every: u64,
    pub hidden_units: usize,
    /// Rollout worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs: 10,
            learning_rate: 3e-4,
            n_envs: 72,
            rollout_steps: 512,
            minibatches: 16,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            total_env_steps: 30_000_000,
            checkpoint_every: 50,
            hidden_units: HIDDEN_UNITS,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, name: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("trainer.{name} = {v}: must lie in [0, 1]")))
            }
        };
        unit(self.gamma, "gamma")?;
        unit(self.gae_lambda, "gae_lambda")?;
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("trainer.{name} = {v}: must be > 0")))
            }
        };
        positive(self.clip_eps, "clip_eps")?;
        positive(self.learning_rate, "learning_rate")?;
        let at_least_one = |v: usize, name: &str| {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::config(format!("trainer.{name} = {v}: must be >= 1")))
            }
        };
        at_least_one(self.epochs, "epochs")?;
        at_least_one(self.n_envs, "n_envs")?;
        at_least_one(self.rollout_steps, "rollout_steps")?;
        at_least_one(self.minibatches, "minibatches")?;
        at_least_one(self.hidden_units, "hidden_units")?;
        for (v, name) in [
            (self.entropy_coef, "entropy_coef"),
            (self.value_coef, "value_coef"),
            (self.max_grad_norm, "max_grad_norm"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("trainer.{name} = {v}: must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Environment steps consumed by one collect/update iteration.
    pub fn steps_per_update(&self) -> u64 {
        (self.n_envs * self.rollout_steps) as u64
    }

    pub fn resolved_workers(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            self.workers
        }
    }
}

/// One row of the metrics log. Episode statistics cover the episodes that
/// finished during the update's rollout and are NaN when none did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: u64,
    pub env_steps: u64,
    pub drone_steps: u64,
    pub wall_time: f64,
    pub episodes: usize,
    pub mean_episode_reward: f64,
    pub mean_episode_length: f64,
    pub mean_waypoints: f64,
    pub collisions: usize,
    pub boundary_terminations: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub explained_variance: f64,
    pub valid_transitions: usize,
    pub skipped: bool,
    pub divergences: u64,
    pub value_mean: f64,
    pub value_sigma: f64,
}

/// Reads a metrics log written by [`Trainer::run`].
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for (k, row) in rdr.deserialize().enumerate() {
        rows.push(row.map_err(|e: csv::Error| Error::Parse {
            line: k + 2,
            reason: e.to_string(),
        })?);
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line: 0,
            reason: format!("{other:?}"),
        },
    }
}

fn mean_of(records: &[EpisodeRecord], f: impl Fn(&EpisodeRecord) -> f64) -> f64 {
    if records.is_empty() {
        f64::NAN
    } else {
        records.iter().map(f).sum::<f64>() / records.len() as f64
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    env_cfg: EnvConfig,
    pub params: PolicyParams,
    pub adam: Adam,
    pub stats: ValueNormStats,
    venv: VecEnv,
    rng: ChaCha8Rng,
    updates: u64,
    env_steps: u64,
    start: Instant,
    /// Every episode finished so far, in completion order.
    pub episodes: Vec<EpisodeRecord>,
}

impl Trainer {
    pub fn new(track: &TrackSpec, env_cfg: &EnvConfig, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        env_cfg.validate()?;
        track.validate()?;
        let obs_len = env_cfg.layout().len();
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, INIT_STREAM, 0));
        let params = PolicyParams::new(obs_len, cfg.hidden_units, &mut init_rng);
        let adam = Adam::new(params.n_params(), cfg.learning_rate);
        let venv = VecEnv::new(track, env_cfg, cfg.n_envs, seed, cfg.resolved_workers())?;
        Ok(Trainer {
            cfg: cfg.clone(),
            env_cfg: env_cfg.clone(),
            params,
            adam,
            stats: ValueNormStats::default(),
            venv,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, UPDATE_STREAM, 0)),
            updates: 0,
            env_steps: 0,
            start: Instant::now(),
            episodes: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn finished(&self) -> bool {
        self.env_steps >= self.cfg.total_env_steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            n_drones: self.env_cfg.n_drones,
            window: self.env_cfg.window,
            params: self.params.clone(),
            value_norm: self.stats.clone(),
        }
    }

    /// One rollout collection followed by one PPO update.
    pub fn iterate(&mut self) -> Result<MetricsRow> {
        let (buf, episodes) = collect_rollouts(
            &self.params,
            &self.stats,
            &mut self.venv,
            self.cfg.rollout_steps,
            self.cfg.gamma,
        )?;
        let m = ppo_update(
            &mut self.params,
            &mut self.adam,
            &buf,
            &mut self.stats,
            &self.cfg,
            &mut self.rng,
        )?;
        self.updates += 1;
        self.env_steps += self.cfg.steps_per_update();
        let row = MetricsRow {
            update: self.updates,
            env_steps: self.env_steps,
            drone_steps: self.env_steps * self.env_cfg.n_drones as u64,
            wall_time: self.start.elapsed().as_secs_f64(),
            episodes: episodes.len(),
            mean_episode_reward: mean_of(&episodes, |e| e.mean_return),
            mean_episode_length: mean_of(&episodes, |e| e.length as f64),
            mean_waypoints: mean_of(&episodes, |e| e.mean_waypoints),
            collisions: episodes.iter().map(|e| e.collisions).sum(),
            boundary_terminations: episodes.iter().map(|e| e.boundary_terminations).sum(),
            policy_loss: m.policy_loss,
            value_loss: m.value_loss,
            entropy: m.entropy,
            approx_kl: m.approx_kl,
            clip_fraction: m.clip_fraction,
            grad_norm: m.grad_norm,
            explained_variance: m.explained_variance,
            valid_transitions: m.valid_transitions,
            skipped: m.skipped,
            divergences: self.venv.divergences,
            value_mean: self.stats.mean(),
            value_sigma: self.stats.sigma(),
        };
        self.episodes.extend(episodes);
        Ok(row)
    }

    /// Trains until the step budget is spent. With an output directory, the
    /// metrics log and checkpoints are written there; on a halt the offending
    /// minibatch is dumped next to them.
    pub fn run(&mut self, out_dir: Option<&Path>, mut on_row: impl FnMut(&MetricsRow)) -> Result<Vec<MetricsRow>> {
        let mut writer = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(METRICS_FILE);
                let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
                Some((csv::Writer::from_writer(file), path))
            }
            None => None,
        };
        let mut rows = Vec::new();
        while !self.finished() {
            let row = match self.iterate() {
                Ok(row) => row,
                Err(Error::Halted { reason, dump }) => {
                    if let Some(dir) = out_dir {
                        let path = dir.join(HALT_DUMP_FILE);
                        let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
                        f.write_all(dump.as_bytes()).map_err(|e| Error::io(&path, e))?;
                        log::error!("training halted: {reason}; minibatch written to {}", path.display());
                    }
                    return Err(Error::Halted { reason, dump });
                }
                Err(e) => return Err(e),
            };
            if let Some((w, path)) = writer.as_mut() {
                w.serialize(&row).map_err(|e| csv_error(path, e))?;
                w.flush().map_err(|e| Error::io(path.as_path(), e))?;
            }
            if let Some(dir) = out_dir {
                if self.cfg.checkpoint_every > 0 && self.updates % self.cfg.checkpoint_every == 0 {
                    self.checkpoint().save(checkpoint_path(dir, self.updates))?;
                }
            }
            on_row(&row);
            rows.push(row);
        }
        if let Some((w, path)) = writer.as_mut() {
            if rows.is_empty() {
                // header only
                w.write_record(metrics_header()).map_err(|e| csv_error(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(rows)
    }
}

/// Path of the numbered checkpoint written after `update` updates.
pub fn checkpoint_path(dir: &Path, update: u64) -> PathBuf {
    dir.join(format!("policy_{update:06}.ckpt"))
}

/// Column names of the metrics log, in order.
pub fn metrics_header() -> Vec<&'static str> {
    vec![
        "update",
        "env_steps",
        "drone_steps",
        "wall_time",
        "episodes",
        "mean_episode_reward",
        "mean_episode_length",
        "mean_waypoints",
        "collisions",
        "boundary_terminations",
        "policy_loss",
        "value_loss",
        "entropy",
        "approx_kl",
        "clip_fraction",
        "grad_norm",
        "explained_variance",
        "valid_transitions",
        "skipped",
        "divergences",
        "value_mean",
        "value_sigma",
    ]
}
