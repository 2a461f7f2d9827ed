use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use swarmrace::dynamics::{self, ActuatorCommand, DynamicsParams, QuadState, Vec3};
use swarmrace::env::{Action, EnvConfig, RaceEnv, ACTION_DIM};
use swarmrace::eval::{self, EvalOptions};
use swarmrace::policy::Checkpoint;
use swarmrace::reward::{self, RewardParams, RewardWeights};
use swarmrace::track::TrackSpec;
use swarmrace::trainer::{self, TrainConfig, Trainer as CoreTrainer};

fn to_py(e: swarmrace::Error) -> PyErr {
    match e {
        swarmrace::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn action(v: &[f64]) -> PyResult<Action> {
    v.try_into()
        .map_err(|_| PyValueError::new_err(format!("actions have {ACTION_DIM} components, got {}", v.len())))
}

/// Full state of one quadrotor.
#[pyclass(name = "QuadState", from_py_object)]
#[derive(Clone)]
struct PyQuadState {
    inner: QuadState,
}

#[pymethods]
impl PyQuadState {
    /// Hover at `p` (zero velocity, level attitude, hover thrust).
    #[new]
    #[pyo3(signature = (p = [0.0, 0.0, 0.0]))]
    fn new(p: [f64; 3]) -> Self {
        let g = DynamicsParams::default().gravity();
        PyQuadState {
            inner: QuadState::hover_at(Vec3::from(p), &g),
        }
    }

    #[getter]
    fn p(&self) -> [f64; 3] {
        self.inner.p.into()
    }

    #[setter]
    fn set_p(&mut self, p: [f64; 3]) {
        self.inner.p = Vec3::from(p);
    }

    #[getter]
    fn v(&self) -> [f64; 3] {
        self.inner.v.into()
    }

    #[setter]
    fn set_v(&mut self, v: [f64; 3]) {
        self.inner.v = Vec3::from(v);
    }

    /// Attitude quaternion `(w, x, y, z)`.
    #[getter]
    fn q(&self) -> [f64; 4] {
        self.inner.q.to_array()
    }

    #[getter]
    fn thrust(&self) -> f64 {
        self.inner.thrust
    }

    #[getter]
    fn omega(&self) -> [f64; 3] {
        self.inner.omega.into()
    }

    fn __repr__(&self) -> String {
        format!(
            "QuadState(p={:?}, v={:?}, q={:?}, thrust={}, omega={:?})",
            self.p(),
            self.v(),
            self.q(),
            self.thrust(),
            self.omega()
        )
    }
}

/// Advances a quadrotor by one control interval under the default parameters.
#[pyfunction]
#[pyo3(signature = (state, thrust, omega, dt_control = 0.01))]
fn step_dynamics(state: &PyQuadState, thrust: f64, omega: [f64; 3], dt_control: f64) -> PyResult<PyQuadState> {
    let cmd = ActuatorCommand {
        thrust,
        omega: Vec3::from(omega),
    };
    let next = dynamics::step(&state.inner, &cmd, dt_control, &DynamicsParams::default()).map_err(to_py)?;
    Ok(PyQuadState { inner: next })
}

/// Racing environment with the default configuration.
#[pyclass(name = "RaceEnv")]
struct PyRaceEnv {
    inner: RaceEnv,
}

#[pymethods]
impl PyRaceEnv {
    #[new]
    #[pyo3(signature = (track = "builtin:loop", n_drones = 1))]
    fn new(track: &str, n_drones: usize) -> PyResult<Self> {
        let track = TrackSpec::resolve(track).map_err(to_py)?;
        let cfg = EnvConfig {
            n_drones,
            ..Default::default()
        };
        Ok(PyRaceEnv {
            inner: RaceEnv::new(track, cfg).map_err(to_py)?,
        })
    }

    #[getter]
    fn obs_len(&self) -> usize {
        self.inner.layout().len()
    }

    #[getter]
    fn n_drones(&self) -> usize {
        self.inner.n_drones()
    }

    /// Starts an episode and returns per-drone observations.
    fn reset(&mut self, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        self.inner.reset(seed).map_err(to_py)
    }

    /// Applies one normalized action per drone.
    /// Returns `(obs, rewards, masks, done)`.
    #[allow(clippy::type_complexity)]
    fn step(&mut self, actions: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<bool>, bool)> {
        let actions = actions.iter().map(|a| action(a)).collect::<PyResult<Vec<_>>>()?;
        let out = self.inner.step(&actions).map_err(to_py)?;
        Ok((out.obs, out.rewards, out.masks, out.done))
    }

    fn positions(&self) -> Vec<[f64; 3]> {
        self.inner.state().drones.iter().map(|d| d.state.p.into()).collect()
    }

    /// Waypoints passed so far by each drone.
    fn progress(&self) -> Vec<usize> {
        self.inner.state().drones.iter().map(|d| d.progress).collect()
    }
}

/// A trained policy loaded from a checkpoint file.
#[pyclass(name = "Policy")]
struct PyPolicy {
    ckpt: Checkpoint,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyPolicy {
            ckpt: Checkpoint::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.ckpt.save(path).map_err(to_py)
    }

    #[getter]
    fn obs_len(&self) -> usize {
        self.ckpt.params.obs_len()
    }

    #[getter]
    fn n_drones(&self) -> usize {
        self.ckpt.n_drones
    }

    /// Mean action for one observation.
    fn act(&self, obs: Vec<f64>) -> PyResult<[f64; 4]> {
        Ok(self.ckpt.params.actor_forward(&obs).map_err(to_py)?.0)
    }

    /// Critic estimate for one observation, in return units.
    fn value(&self, obs: Vec<f64>) -> PyResult<f64> {
        let v = self.ckpt.params.critic_forward(&obs).map_err(to_py)?;
        Ok(self.ckpt.value_norm.denormalize(v))
    }

    fn describe(&self) -> String {
        self.ckpt.describe()
    }

    /// Evaluates the policy and returns the summary as a dict.
    #[pyo3(signature = (track = "builtin:loop", trials = 10, seed = 0))]
    fn evaluate(&self, track: &str, trials: usize, seed: u64) -> PyResult<HashMap<String, f64>> {
        let track = TrackSpec::resolve(track).map_err(to_py)?;
        let cfg = EnvConfig {
            n_drones: self.ckpt.n_drones,
            window: self.ckpt.window,
            ..Default::default()
        };
        let out = eval::evaluate(
            &self.ckpt.params,
            &track,
            &cfg,
            &EvalOptions {
                trials,
                base_seed: seed,
                workers: 1,
                record_trajectories: 0,
            },
        )
        .map_err(to_py)?;
        let s = out.summary;
        Ok(HashMap::from([
            ("trials".to_string(), s.trials as f64),
            ("success_rate".to_string(), s.success_rate),
            ("collision_rate".to_string(), s.collision_rate),
            ("lap_time_mean".to_string(), s.lap_time_mean),
            ("lap_time_std".to_string(), s.lap_time_std),
            ("median_min_distance".to_string(), s.median_min_distance),
        ]))
    }
}

/// Shared-policy PPO trainer on a track with default hyperparameters apart
/// from the arguments.
#[pyclass(name = "Trainer", unsendable)]
struct PyTrainer {
    inner: CoreTrainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (track = "builtin:loop", n_drones = 1, n_envs = 8, rollout_steps = 256, hidden_units = 128, seed = 0))]
    fn new(
        track: &str,
        n_drones: usize,
        n_envs: usize,
        rollout_steps: usize,
        hidden_units: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let track = TrackSpec::resolve(track).map_err(to_py)?;
        let env = EnvConfig {
            n_drones,
            ..Default::default()
        };
        let cfg = TrainConfig {
            n_envs,
            rollout_steps,
            hidden_units,
            ..Default::default()
        };
        Ok(PyTrainer {
            inner: CoreTrainer::new(&track, &env, &cfg, seed).map_err(to_py)?,
        })
    }

    /// One rollout plus one update; returns the metrics row.
    fn iterate(&mut self) -> PyResult<HashMap<String, f64>> {
        let r = self.inner.iterate().map_err(to_py)?;
        Ok(HashMap::from([
            ("update".to_string(), r.update as f64),
            ("env_steps".to_string(), r.env_steps as f64),
            ("episodes".to_string(), r.episodes as f64),
            ("mean_episode_reward".to_string(), r.mean_episode_reward),
            ("mean_waypoints".to_string(), r.mean_waypoints),
            ("policy_loss".to_string(), r.policy_loss),
            ("value_loss".to_string(), r.value_loss),
            ("entropy".to_string(), r.entropy),
            ("value_sigma".to_string(), r.value_sigma),
        ]))
    }

    fn policy(&self) -> PyPolicy {
        PyPolicy {
            ckpt: self.inner.checkpoint(),
        }
    }
}

/// Tangent-sphere progress reward with the default weights.
#[pyfunction]
#[pyo3(signature = (p_prev, p_now, goal, passed = false, d_w = 1.0))]
fn target_reward(p_prev: [f64; 3], p_now: [f64; 3], goal: [f64; 3], passed: bool, d_w: f64) -> f64 {
    let params = RewardParams {
        weights: RewardWeights::default(),
        safe_radius: 0.1,
        tolerance: 0.1,
        d_w,
    };
    reward::target_reward(&Vec3::from(p_prev), &Vec3::from(p_now), &Vec3::from(goal), passed, &params)
}

/// Generalized advantage estimation; returns `(advantages, returns)`.
#[pyfunction]
#[pyo3(signature = (rewards, values, dones, bootstrap, gamma = 0.99, lam = 0.95))]
fn compute_gae(
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    trainer::compute_gae(&rewards, &values, &dones, bootstrap, gamma, lam).map_err(to_py)
}

#[pyfunction]
fn builtin_tracks() -> Vec<String> {
    TrackSpec::builtin_names().map(String::from).collect()
}

#[pymodule]
fn pyswarmrace(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQuadState>()?;
    m.add_class::<PyRaceEnv>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(step_dynamics, m)?)?;
    m.add_function(wrap_pyfunction!(target_reward, m)?)?;
    m.add_function(wrap_pyfunction!(compute_gae, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_tracks, m)?)?;
    Ok(())
}
