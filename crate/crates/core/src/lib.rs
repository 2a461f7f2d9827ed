//! Multi-drone waypoint racing: a simplified quadrotor simulator, a racing
//! environment with shaped rewards, and a masked independent-PPO trainer with
//! a shared policy.
//!
//! ```no_run
//! use swarmrace::{env::EnvConfig, track::TrackSpec, trainer::{TrainConfig, Trainer}};
//!
//! let track = TrackSpec::builtin("loop").unwrap();
//! let cfg = TrainConfig { n_envs: 8, rollout_steps: 256, total_env_steps: 200_000, ..Default::default() };
//! let mut trainer = Trainer::new(&track, &EnvConfig::default(), &cfg, 1).unwrap();
//! trainer.run(None, |row| println!("{} {}", row.update, row.mean_waypoints)).unwrap();
//! ```

pub mod config;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod policy;
pub mod reward;
pub mod seeding;
pub mod track;
pub mod trainer;

pub use error::{Error, Result};
