//! The racing environment: N drones sharing a waypoint track.
//!
//! Each drone observes only local information, laid out as
//!
//! ```text
//! [ Δp to next waypoint, W-1 consecutive waypoint deltas ]   3W
//! [ velocity, row-major R(q) ]                                12
//! [ for each neighbor j != i: Δp_ij, Δv_ij, |Δp_ij| ]         7(N-1)
//! ```
//!
//! Neighbors appear in ascending index order. Boundary violations terminate
//! the offending drone (its experience is masked from then on), while
//! inter-drone proximity is only penalized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, ActuatorCommand, DynamicsParams, QuadState, Vec3};
use crate::error::{Error, Result};
use crate::reward::{self, DroneKinematics, RewardBreakdown, RewardParams, RewardWeights};
use crate::track::TrackSpec;

pub const ACTION_DIM: usize = 4;

pub type Action = [f64; ACTION_DIM];

/// Maximum placement attempts per drone at reset.
const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormConstants {
    pub k_p: [f64; 3],
    pub k_v: [f64; 3],
    pub k_rp: [f64; 3],
    pub k_rv: [f64; 3],
    pub k_d: f64,
}

impl Default for NormConstants {
    fn default() -> Self {
        NormConstants {
            k_p: [16.0, 16.0, 3.0],
            k_v: [15.0, 15.0, 5.0],
            k_rp: [8.0, 8.0, 3.0],
            k_rv: [15.0, 15.0, 5.0],
            k_d: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitBox {
    pub center: [f64; 3],
    /// Edge length of the cube, m.
    pub side: f64,
}

impl Default for InitBox {
    fn default() -> Self {
        InitBox {
            center: [0.0, 0.0, 2.0],
            side: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub n_drones: usize,
    /// Lookahead window `W` (number of waypoints observed).
    pub window: usize,
    /// Drone safe radius `R`, m.
    pub safe_radius: f64,
    /// Safety tolerance `τ`, m.
    pub tolerance: f64,
    /// Body-rate limits, rad/s.
    pub omega_max: [f64; 3],
    /// Maximum episode length in control steps.
    pub t_max: usize,
    pub dt_control: f64,
    pub norm: NormConstants,
    pub init_box: InitBox,
    pub dynamics: DynamicsParams,
    pub reward: RewardWeights,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_drones: 1,
            window: 2,
            safe_radius: 0.10,
            tolerance: 0.10,
            omega_max: [10.0, 10.0, 0.3],
            t_max: 1500,
            dt_control: 0.01,
            norm: NormConstants::default(),
            init_box: InitBox::default(),
            dynamics: DynamicsParams::default(),
            reward: RewardWeights::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_drones < 1 {
            return Err(Error::config("env.n_drones: must be >= 1"));
        }
        if self.window < 1 {
            return Err(Error::config("env.window: must be >= 1"));
        }
        if !(self.safe_radius > 0.0) {
            return Err(Error::config("env.safe_radius: must be > 0"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::config("env.tolerance: must be >= 0"));
        }
        if self.omega_max.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::config("env.omega_max: must be > 0"));
        }
        if self.t_max < 1 {
            return Err(Error::config("env.t_max: must be >= 1"));
        }
        let n = &self.norm;
        let all_positive = n
            .k_p
            .iter()
            .chain(&n.k_v)
            .chain(&n.k_rp)
            .chain(&n.k_rv)
            .chain(std::iter::once(&n.k_d))
            .all(|k| *k > 0.0);
        if !all_positive {
            return Err(Error::config("env.norm: normalization constants must be > 0"));
        }
        if !(self.init_box.side >= 0.0) {
            return Err(Error::config("env.init_box.side: must be >= 0"));
        }
        self.dynamics.validate()?;
        self.dynamics.substeps(self.dt_control)?;
        self.reward.validate()?;
        Ok(())
    }

    pub fn layout(&self) -> ObsLayout {
        ObsLayout {
            window: self.window,
            n_drones: self.n_drones,
        }
    }

    pub fn reward_params(&self, track: &TrackSpec) -> RewardParams {
        RewardParams {
            weights: self.reward.clone(),
            safe_radius: self.safe_radius,
            tolerance: self.tolerance,
            d_w: track.d_w,
        }
    }
}

/// Block structure of an observation vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObsLayout {
    pub window: usize,
    pub n_drones: usize,
}

impl ObsLayout {
    pub fn len(&self) -> usize {
        3 * self.window + 12 + 7 * (self.n_drones - 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ego_start(&self) -> usize {
        3 * self.window
    }

    pub fn neighbor_start(&self) -> usize {
        3 * self.window + 12
    }

    /// Per-component scale of the normalization; 1 on the rotation block.
    pub fn scales(&self, norm: &NormConstants) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.len());
        for _ in 0..self.window {
            s.extend_from_slice(&norm.k_p);
        }
        s.extend_from_slice(&norm.k_v);
        s.extend_from_slice(&[1.0; 9]);
        for _ in 1..self.n_drones {
            s.extend_from_slice(&norm.k_rp);
            s.extend_from_slice(&norm.k_rv);
            s.push(norm.k_d);
        }
        s
    }
}

pub fn normalize_observation(raw: &mut [f64], layout: &ObsLayout, norm: &NormConstants) {
    for (x, s) in raw.iter_mut().zip(layout.scales(norm)) {
        *x /= s;
    }
}

pub fn denormalize_observation(obs: &mut [f64], layout: &ObsLayout, norm: &NormConstants) {
    for (x, s) in obs.iter_mut().zip(layout.scales(norm)) {
        *x *= s;
    }
}

pub fn clip_action(a: &Action) -> Action {
    a.map(|x| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) })
}

/// Maps a normalized action in `[-1, 1]^4` to a physical command.
pub fn denormalize_action(a: &Action, cfg: &EnvConfig) -> ActuatorCommand {
    let a = clip_action(a);
    ActuatorCommand {
        thrust: 0.5 * (a[0] + 1.0) * cfg.dynamics.max_thrust(),
        omega: Vec3::new(
            a[1] * cfg.omega_max[0],
            a[2] * cfg.omega_max[1],
            a[3] * cfg.omega_max[2],
        ),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroneSlot {
    pub state: QuadState,
    /// Index of the next waypoint, counted without wrapping.
    pub progress: usize,
    pub terminated: bool,
    pub prev_action: Option<Action>,
}

impl DroneSlot {
    pub fn laps_completed(&self, n_waypoints: usize) -> usize {
        self.progress / n_waypoints
    }
}

/// Global state of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct RaceState {
    pub drones: Vec<DroneSlot>,
    /// Waypoint positions for this episode, after noise.
    pub waypoints: Vec<Vec3>,
    pub t: usize,
    pub done: bool,
}

impl RaceState {
    pub fn waypoint(&self, k: usize) -> Vec3 {
        self.waypoints[k % self.waypoints.len()]
    }

    pub fn target_of(&self, i: usize) -> Vec3 {
        self.waypoint(self.drones[i].progress)
    }

    pub fn kinematics(&self) -> Vec<DroneKinematics> {
        self.drones
            .iter()
            .map(|d| DroneKinematics {
                p: d.state.p,
                v: d.state.v,
                active: !d.terminated,
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DroneEvents {
    pub waypoint_passed: bool,
    pub lap_completed: bool,
    /// Neighbors within `2R` (collisions for metrics).
    pub collision_partners: Vec<usize>,
    /// Neighbors within `2R + τ` (penalized).
    pub proximity_partners: Vec<usize>,
    pub boundary_violation: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Normalized observations, one per drone.
    pub obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub breakdown: Vec<RewardBreakdown>,
    /// `false` once a drone is terminated; its experience is invalid.
    pub masks: Vec<bool>,
    pub terminated: Vec<bool>,
    pub info: Vec<DroneEvents>,
    /// The episode has ended.
    pub done: bool,
    /// The episode ended on the step limit or lap target rather than because
    /// every drone was terminated.
    pub truncated: bool,
}

/// Counts collision events: a pair closer than `2R` counts once per
/// contiguous interval of contact.
#[derive(Clone, Debug)]
pub struct CollisionTracker {
    n: usize,
    in_contact: Vec<bool>,
    pub events: usize,
}

impl CollisionTracker {
    pub fn new(n_drones: usize) -> Self {
        CollisionTracker {
            n: n_drones,
            in_contact: vec![false; n_drones * n_drones],
            events: 0,
        }
    }

    /// Updates contact state from one step's events; returns the new events.
    pub fn observe(&mut self, info: &[DroneEvents]) -> usize {
        let mut now = vec![false; self.n * self.n];
        for (i, ev) in info.iter().enumerate() {
            for &j in &ev.collision_partners {
                now[i.min(j) * self.n + i.max(j)] = true;
            }
        }
        let fresh = now
            .iter()
            .zip(&self.in_contact)
            .filter(|(n, before)| **n && !**before)
            .count();
        self.in_contact = now;
        self.events += fresh;
        fresh
    }
}

/// Builds the raw (un-normalized) observation of drone `i`.
pub fn build_observation(i: usize, state: &RaceState, layout: &ObsLayout, out: &mut [f64]) {
    debug_assert_eq!(out.len(), layout.len());
    let me = &state.drones[i];
    let p = me.state.p;
    let mut prev = p;
    let mut o = 0;
    for k in 0..layout.window {
        let wp = state.waypoint(me.progress + k);
        let d = wp - prev;
        out[o..o + 3].copy_from_slice(d.as_slice());
        o += 3;
        prev = wp;
    }
    out[o..o + 3].copy_from_slice(me.state.v.as_slice());
    o += 3;
    let r = me.state.q.rotation_unchecked();
    for row in 0..3 {
        for col in 0..3 {
            out[o] = r[(row, col)];
            o += 1;
        }
    }
    for (j, other) in state.drones.iter().enumerate() {
        if j == i {
            continue;
        }
        let dp = other.state.p - p;
        let dv = other.state.v - me.state.v;
        out[o..o + 3].copy_from_slice(dp.as_slice());
        out[o + 3..o + 6].copy_from_slice(dv.as_slice());
        out[o + 6] = dp.norm();
        o += 7;
    }
}

pub struct RaceEnv {
    track: TrackSpec,
    cfg: EnvConfig,
    params: RewardParams,
    layout: ObsLayout,
    state: RaceState,
    rng: ChaCha8Rng,
}

impl RaceEnv {
    pub fn new(track: TrackSpec, cfg: EnvConfig) -> Result<Self> {
        track.validate()?;
        cfg.validate()?;
        let params = cfg.reward_params(&track);
        let layout = cfg.layout();
        let state = RaceState {
            drones: Vec::new(),
            waypoints: track.waypoints.iter().map(|w| Vec3::from(*w)).collect(),
            t: 0,
            done: true,
        };
        Ok(RaceEnv {
            track,
            cfg,
            params,
            layout,
            state,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn track(&self) -> &TrackSpec {
        &self.track
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn reward_params(&self) -> &RewardParams {
        &self.params
    }

    pub fn layout(&self) -> ObsLayout {
        self.layout
    }

    pub fn state(&self) -> &RaceState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut RaceState {
        &mut self.state
    }

    pub fn n_drones(&self) -> usize {
        self.cfg.n_drones
    }

    /// Starts a new episode; deterministic in `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = self.track.noise_sigma;
        let waypoints = if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
            self.track
                .waypoints
                .iter()
                .map(|w| {
                    Vec3::new(
                        w[0] + noise.sample(&mut self.rng),
                        w[1] + noise.sample(&mut self.rng),
                        w[2] + noise.sample(&mut self.rng),
                    )
                })
                .collect()
        } else {
            self.track.waypoints.iter().map(|w| Vec3::from(*w)).collect()
        };

        let gravity = self.cfg.dynamics.gravity();
        let min_sep = 2.0 * self.cfg.safe_radius + self.cfg.tolerance;
        let center = Vec3::from(self.cfg.init_box.center);
        let half = 0.5 * self.cfg.init_box.side;
        let mut positions: Vec<Vec3> = Vec::with_capacity(self.cfg.n_drones);
        for i in 0..self.cfg.n_drones {
            let mut placed = None;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let offset = Vec3::new(
                    self.rng.random_range(-half..=half),
                    self.rng.random_range(-half..=half),
                    self.rng.random_range(-half..=half),
                );
                let p = center + offset;
                if positions.iter().all(|q| (q - p).norm() >= min_sep) {
                    placed = Some(p);
                    break;
                }
            }
            match placed {
                Some(p) => positions.push(p),
                None => {
                    return Err(Error::config(format!(
                        "env.init_box: could not place drone {i} at least {min_sep} m from the others \
                         after {MAX_PLACEMENT_ATTEMPTS} attempts; the box is too small"
                    )))
                }
            }
        }

        self.state = RaceState {
            drones: positions
                .into_iter()
                .map(|p| DroneSlot {
                    state: QuadState::hover_at(p, &gravity),
                    progress: 0,
                    terminated: false,
                    prev_action: None,
                })
                .collect(),
            waypoints,
            t: 0,
            done: false,
        };
        Ok(self.observations())
    }

    pub fn observe_into(&self, i: usize, out: &mut [f64]) {
        build_observation(i, &self.state, &self.layout, out);
        normalize_observation(out, &self.layout, &self.cfg.norm);
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_drones)
            .map(|i| {
                let mut o = vec![0.0; self.layout.len()];
                self.observe_into(i, &mut o);
                o
            })
            .collect()
    }

    /// Advances every active drone by one control interval.
    ///
    /// Actions of terminated drones are ignored.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        let n = self.cfg.n_drones;
        if actions.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: actions.len(),
            });
        }
        if self.state.done {
            return Err(Error::InvalidState("step called on a finished episode".into()));
        }

        let was_active: Vec<bool> = self.state.drones.iter().map(|d| !d.terminated).collect();
        let prev_positions: Vec<Vec3> = self.state.drones.iter().map(|d| d.state.p).collect();
        let clipped: Vec<Action> = actions.iter().map(clip_action).collect();

        for i in 0..n {
            if !was_active[i] {
                continue;
            }
            let cmd = denormalize_action(&clipped[i], &self.cfg);
            let slot = &mut self.state.drones[i];
            slot.state = dynamics::step(&slot.state, &cmd, self.cfg.dt_control, &self.cfg.dynamics)
                .map_err(|_| Error::Diverged { drone: i })?;
        }

        let swarm = self.state.kinematics();
        let swarm: Vec<DroneKinematics> = swarm
            .into_iter()
            .zip(&was_active)
            .map(|(k, a)| DroneKinematics { active: *a, ..k })
            .collect();

        let n_wp = self.state.waypoints.len();
        let collision_dist = 2.0 * self.cfg.safe_radius;
        let band = collision_dist + self.cfg.tolerance;
        let mut rewards = vec![0.0; n];
        let mut breakdown = vec![RewardBreakdown::default(); n];
        let mut info = vec![DroneEvents::default(); n];

        for i in 0..n {
            if !was_active[i] {
                continue;
            }
            let target = self.state.target_of(i);
            let p_now = swarm[i].p;
            let passed = (p_now - target).norm() < self.track.d_w;
            let a_prev = self.state.drones[i].prev_action.unwrap_or(clipped[i]);
            let ctx = reward::TransitionContext {
                drone: i,
                p_prev: prev_positions[i],
                target,
                passed,
                omega: self.state.drones[i].state.omega,
                a_prev: &a_prev,
                a_now: &clipped[i],
                swarm: &swarm,
                workspace: &self.track.workspace,
            };
            let b = reward::total_reward(&ctx, &self.params);
            breakdown[i] = b;
            rewards[i] = b.total;

            let ev = &mut info[i];
            for (j, other) in swarm.iter().enumerate() {
                if j == i || !other.active {
                    continue;
                }
                let d = (other.p - p_now).norm();
                if d <= band {
                    ev.proximity_partners.push(j);
                }
                if d <= collision_dist {
                    ev.collision_partners.push(j);
                }
            }
            ev.boundary_violation = !self.track.workspace.contains(&p_now);
            ev.waypoint_passed = passed;

            let slot = &mut self.state.drones[i];
            slot.prev_action = Some(clipped[i]);
            if passed {
                slot.progress += 1;
                ev.lap_completed = slot.progress % n_wp == 0;
            }
            if ev.boundary_violation {
                slot.terminated = true;
            }
        }

        self.state.t += 1;
        let terminated: Vec<bool> = self.state.drones.iter().map(|d| d.terminated).collect();
        let all_terminated = terminated.iter().all(|t| *t);
        let laps = self.track.laps;
        let all_finished = self
            .state
            .drones
            .iter()
            .all(|d| d.terminated || d.laps_completed(n_wp) >= laps)
            && !all_terminated;
        let timeout = self.state.t >= self.cfg.t_max;
        let done = all_terminated || all_finished || timeout;
        self.state.done = done;

        Ok(StepOutcome {
            obs: self.observations(),
            rewards,
            breakdown,
            masks: terminated.iter().map(|t| !t).collect(),
            terminated,
            info,
            done,
            truncated: done && !all_terminated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line_track() -> TrackSpec {
        TrackSpec {
            name: "line".into(),
            waypoints: vec![[1.0, 0.0, 2.0], [2.0, 0.0, 2.0], [3.0, 0.0, 2.0]],
            d_w: 0.5,
            workspace: Default::default(),
            laps: 1,
            noise_sigma: 0.0,
        }
    }

    fn cfg(n: usize) -> EnvConfig {
        EnvConfig {
            n_drones: n,
            ..Default::default()
        }
    }

    #[test]
    fn observation_length_matches_layout() {
        let layout = cfg(2).layout();
        assert_eq!(layout.len(), 25);
        let mut env = RaceEnv::new(line_track(), cfg(2)).unwrap();
        let obs = env.reset(3).unwrap();
        assert!(obs.iter().all(|o| o.len() == 25));
        let out = env.step(&[[0.0; 4]; 2]).unwrap();
        assert!(out.obs.iter().all(|o| o.len() == 25));
    }

    #[test]
    fn raw_observation_blocks() {
        let mut env = RaceEnv::new(line_track(), cfg(2)).unwrap();
        env.reset(0).unwrap();
        {
            let st = env.state_mut();
            st.drones[0].state.p = Vec3::new(1.0, 0.0, 2.0);
            st.drones[0].progress = 1;
            st.drones[1].state.p = Vec3::new(1.0, 3.0, 2.0);
            st.drones[1].state.v = Vec3::new(0.0, -1.0, 0.0);
        }
        let layout = env.layout();
        let mut raw = vec![0.0; layout.len()];
        build_observation(0, env.state(), &layout, &mut raw);
        assert_eq!(&raw[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&raw[3..6], &[1.0, 0.0, 0.0]);
        assert_eq!(&raw[6..9], &[0.0, 0.0, 0.0]);
        assert_eq!(&raw[9..18], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(&raw[18..25], &[0.0, 3.0, 0.0, 0.0, -1.0, 0.0, 3.0]);
    }

    #[test]
    fn waypoint_chain_wraps() {
        let mut env = RaceEnv::new(line_track(), cfg(1)).unwrap();
        env.reset(0).unwrap();
        env.state_mut().drones[0].progress = 2;
        env.state_mut().drones[0].state.p = Vec3::new(0.0, 0.0, 2.0);
        let layout = env.layout();
        let mut raw = vec![0.0; layout.len()];
        build_observation(0, env.state(), &layout, &mut raw);
        assert_eq!(&raw[0..3], &[3.0, 0.0, 0.0]);
        assert_eq!(&raw[3..6], &[-2.0, 0.0, 0.0]);
    }

    #[test]
    fn normalization_examples() {
        let layout = ObsLayout {
            window: 1,
            n_drones: 2,
        };
        let norm = NormConstants::default();
        let mut raw = vec![0.0; layout.len()];
        raw[0..3].copy_from_slice(&[16.0, 16.0, 3.0]);
        raw[layout.neighbor_start() + 6] = 4.0;
        normalize_observation(&mut raw, &layout, &norm);
        assert_eq!(&raw[0..3], &[1.0, 1.0, 1.0]);
        assert_eq!(raw[layout.neighbor_start() + 6], 1.0);

        let mut zero = vec![0.0; layout.len()];
        normalize_observation(&mut zero, &layout, &norm);
        assert!(zero.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rotation_block_is_not_scaled() {
        let layout = cfg(1).layout();
        let s = layout.scales(&NormConstants::default());
        assert!(s[layout.ego_start() + 3..layout.ego_start() + 12]
            .iter()
            .all(|x| *x == 1.0));
    }

    #[test]
    fn action_denormalization() {
        let c = EnvConfig::default();
        let g = 9.81;
        let cmd = denormalize_action(&[1.0, 0.0, 0.0, 0.0], &c);
        assert_relative_eq!(cmd.thrust, 3.5 * g, epsilon = 1e-12);
        assert_eq!(cmd.omega, Vec3::zeros());
        let cmd = denormalize_action(&[-1.0, 1.0, 1.0, 1.0], &c);
        assert_eq!(cmd.thrust, 0.0);
        assert_eq!(cmd.omega, Vec3::new(10.0, 10.0, 0.3));
        let cmd = denormalize_action(&[0.0, 0.3, 0.3, 0.3], &c);
        assert_relative_eq!(cmd.thrust, 1.75 * g, epsilon = 1e-12);
        let cmd = denormalize_action(&[7.0, -3.0, 0.0, 0.0], &c);
        assert_relative_eq!(cmd.thrust, 3.5 * g, epsilon = 1e-12);
        assert_eq!(cmd.omega.x, -10.0);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = RaceEnv::new(TrackSpec::builtin("loop").unwrap(), cfg(3)).unwrap();
        let mut b = RaceEnv::new(TrackSpec::builtin("loop").unwrap(), cfg(3)).unwrap();
        assert_eq!(a.reset(11).unwrap(), b.reset(11).unwrap());
        assert_eq!(a.state(), b.state());
        assert_ne!(a.reset(12).unwrap(), b.reset(11).unwrap());
    }

    #[test]
    fn reset_respects_separation() {
        let mut env = RaceEnv::new(TrackSpec::builtin("loop").unwrap(), cfg(2)).unwrap();
        for seed in 0..500 {
            env.reset(seed).unwrap();
            let d = env.state().drones[0].state.p - env.state().drones[1].state.p;
            assert!(d.norm() >= 0.3);
        }
    }

    #[test]
    fn reset_fails_when_box_too_small() {
        let mut c = cfg(3);
        c.init_box.side = 0.01;
        let mut env = RaceEnv::new(TrackSpec::builtin("loop").unwrap(), c).unwrap();
        assert!(matches!(env.reset(0), Err(Error::Config(_))));
    }

    #[test]
    fn waypoint_passing_advances_progress() {
        let mut env = RaceEnv::new(line_track(), cfg(1)).unwrap();
        env.reset(0).unwrap();
        // Hover just inside the waypoint radius; one hover step barely moves it.
        env.state_mut().drones[0].state.p = Vec3::new(1.0 - 0.99 * 0.5, 0.0, 2.0);
        let out = env.step(&[[-1.0 + 2.0 / 3.5, 0.0, 0.0, 0.0]]).unwrap();
        assert!(out.info[0].waypoint_passed);
        assert_eq!(env.state().drones[0].progress, 1);
        assert_eq!(out.rewards[0], 5.0);
    }

    #[test]
    fn boundary_violation_terminates_and_masks() {
        let mut env = RaceEnv::new(line_track(), cfg(2)).unwrap();
        env.reset(0).unwrap();
        env.state_mut().drones[0].state.p = Vec3::new(0.0, 0.0, -0.5);
        let out = env.step(&[[0.0; 4]; 2]).unwrap();
        assert!(out.terminated[0]);
        assert!(!out.masks[0]);
        assert!(out.info[0].boundary_violation);
        assert!(out.masks[1]);
        assert!(!out.done);
        assert!(out.breakdown[0].crash <= -30.0);

        // The terminated drone is frozen and excluded from collision checks.
        let frozen = env.state().drones[0].state.clone();
        env.state_mut().drones[1].state.p = frozen.p + Vec3::new(0.05, 0.0, 0.0);
        let out = env.step(&[[0.0; 4]; 2]).unwrap();
        assert_eq!(env.state().drones[0].state, frozen);
        assert!(out.info[1].collision_partners.is_empty());
        assert_eq!(out.rewards[0], 0.0);
        assert!(!out.masks[0]);
    }

    #[test]
    fn collisions_do_not_end_the_episode() {
        let mut env = RaceEnv::new(line_track(), cfg(2)).unwrap();
        env.reset(0).unwrap();
        let p0 = Vec3::new(0.0, 0.0, 3.0);
        env.state_mut().drones[0].state.p = p0;
        env.state_mut().drones[1].state.p = p0 + Vec3::new(0.19, 0.0, 0.0);
        let hover = [-1.0 + 2.0 / 3.5, 0.0, 0.0, 0.0];
        let out = env.step(&[hover; 2]).unwrap();
        assert_eq!(out.info[0].collision_partners, vec![1]);
        assert_eq!(out.info[1].collision_partners, vec![0]);
        assert_eq!(out.breakdown[0].crash, -0.5);
        assert!(!out.done);
        assert!(out.masks.iter().all(|m| *m));
    }

    #[test]
    fn episode_ends_at_step_limit() {
        let mut c = cfg(1);
        c.t_max = 3;
        let mut env = RaceEnv::new(line_track(), c).unwrap();
        env.reset(0).unwrap();
        let hover = [-1.0 + 2.0 / 3.5, 0.0, 0.0, 0.0];
        assert!(!env.step(&[hover]).unwrap().done);
        assert!(!env.step(&[hover]).unwrap().done);
        let out = env.step(&[hover]).unwrap();
        assert!(out.done && out.truncated);
        assert!(env.step(&[hover]).is_err());
    }

    #[test]
    fn all_terminated_is_not_truncation() {
        let mut env = RaceEnv::new(line_track(), cfg(1)).unwrap();
        env.reset(0).unwrap();
        env.state_mut().drones[0].state.p = Vec3::new(0.0, 0.0, 50.0);
        let out = env.step(&[[0.0; 4]]).unwrap();
        assert!(out.done && !out.truncated);
    }

    #[test]
    fn wrong_action_count_is_rejected() {
        let mut env = RaceEnv::new(line_track(), cfg(2)).unwrap();
        env.reset(0).unwrap();
        assert!(matches!(env.step(&[[0.0; 4]]), Err(Error::Shape { .. })));
    }
}
