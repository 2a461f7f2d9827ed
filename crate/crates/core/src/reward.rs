//! Per-drone, per-step reward: waypoint progress measured against a virtual
//! tangent sphere, a smoothness penalty, a direction-aware proximity penalty,
//! and the soft crash penalty (per-neighbor collision cost inside `2R + τ`
//! plus the boundary cost).

use serde::{Deserialize, Serialize};

use crate::dynamics::Vec3;
use crate::error::{Error, Result};
use crate::track::Workspace;

/// Reward weights as they appear in run configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    /// Body-rate magnitude penalty.
    pub lambda1: f64,
    /// Action-difference penalty.
    pub lambda2: f64,
    /// Proximity penalty.
    pub lambda3: f64,
    /// Closing-speed penalty.
    pub lambda4: f64,
    /// Tangent sphere radius as a fraction of the waypoint radius.
    pub eta: f64,
    /// Proximity decay rate, 1/m.
    pub beta: f64,
    pub r_arrival: f64,
    pub r_collision: f64,
    pub r_boundary: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda1: 2e-4,
            lambda2: 1e-4,
            lambda3: 2.4,
            lambda4: 0.5,
            eta: 0.75,
            beta: 15.0,
            r_arrival: 5.0,
            r_collision: 0.5,
            r_boundary: 30.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::config("env.reward.eta: must satisfy 0 < eta < 1"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config("env.reward.beta: must be > 0"));
        }
        let magnitudes = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("r_arrival", self.r_arrival),
            ("r_collision", self.r_collision),
            ("r_boundary", self.r_boundary),
        ];
        for (name, v) in magnitudes {
            if !(v >= 0.0) {
                return Err(Error::config(format!("env.reward.{name}: must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Fully resolved reward parameters for one track and swarm configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardParams {
    pub weights: RewardWeights,
    /// Drone safe radius `R`, m.
    pub safe_radius: f64,
    /// Safety tolerance `τ`, m.
    pub tolerance: f64,
    /// Waypoint radius, m.
    pub d_w: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardBreakdown {
    pub target: f64,
    pub smooth: f64,
    pub safe: f64,
    pub crash: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(target: f64, smooth: f64, safe: f64, crash: f64) -> Self {
        RewardBreakdown {
            target,
            smooth,
            safe,
            crash,
            total: target + smooth + safe + crash,
        }
    }
}

/// Position and velocity of one drone as seen by the reward terms.
/// Inactive drones (terminated earlier in the episode) are ignored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DroneKinematics {
    pub p: Vec3,
    pub v: Vec3,
    pub active: bool,
}

/// Tangent-line distance from `p` to the sphere of radius `η·d_w` around `g`.
pub fn tangent_distance(p: &Vec3, g: &Vec3, params: &RewardParams) -> f64 {
    let r = params.weights.eta * params.d_w;
    ((p - g).norm_squared() - r * r).max(0.0).sqrt()
}

pub fn target_reward(
    p_prev: &Vec3,
    p_now: &Vec3,
    g: &Vec3,
    passed: bool,
    params: &RewardParams,
) -> f64 {
    if passed {
        params.weights.r_arrival
    } else {
        tangent_distance(p_prev, g, params) - tangent_distance(p_now, g, params)
    }
}

pub fn smooth_reward(omega: &Vec3, a_prev: &[f64; 4], a_now: &[f64; 4], params: &RewardParams) -> f64 {
    let da = a_prev
        .iter()
        .zip(a_now)
        .map(|(p, n)| (p - n) * (p - n))
        .sum::<f64>()
        .sqrt();
    -params.weights.lambda1 * omega.norm() - params.weights.lambda2 * da
}

/// `cos∠(Δp, Δv)`, defined as 0 when either vector vanishes.
pub fn approach_cosine(dp: &Vec3, dv: &Vec3) -> f64 {
    let np = dp.norm();
    let nv = dv.norm();
    if np == 0.0 || nv == 0.0 {
        0.0
    } else {
        (dp.dot(dv) / (np * nv)).clamp(-1.0, 1.0)
    }
}

/// Proximity penalty factor; 1 at or inside `2R`, exponential decay beyond.
pub fn proximity_factor(dist: f64, params: &RewardParams) -> f64 {
    (-params.weights.beta * (dist - 2.0 * params.safe_radius))
        .exp()
        .min(1.0)
}

/// Closing-speed penalty factor, zero beyond `3R + d_w`.
pub fn closing_factor(dist: f64, params: &RewardParams) -> f64 {
    let x = (1.0 - (dist - 3.0 * params.safe_radius) / params.d_w).clamp(0.0, 1.0);
    x * x
}

/// Safe-reward contribution of one neighbor with relative position
/// `dp = p_j - p_i` and relative velocity `dv = v_j - v_i`.
pub fn pair_safe_penalty(dp: &Vec3, dv: &Vec3, params: &RewardParams) -> f64 {
    let c = approach_cosine(dp, dv);
    if c >= 0.0 {
        return 0.0;
    }
    let d = dp.norm();
    let w = &params.weights;
    c * (w.lambda3 * proximity_factor(d, params) + w.lambda4 * dv.norm() * closing_factor(d, params))
}

pub fn safe_reward(i: usize, swarm: &[DroneKinematics], params: &RewardParams) -> f64 {
    let me = &swarm[i];
    swarm
        .iter()
        .enumerate()
        .filter(|(j, other)| *j != i && other.active)
        .map(|(_, other)| pair_safe_penalty(&(other.p - me.p), &(other.v - me.v), params))
        .sum()
}

/// Neighbors of drone `i` within the soft collision band `2R + τ`.
pub fn proximity_violations(i: usize, swarm: &[DroneKinematics], params: &RewardParams) -> usize {
    let band = 2.0 * params.safe_radius + params.tolerance;
    let me = &swarm[i];
    swarm
        .iter()
        .enumerate()
        .filter(|(j, other)| *j != i && other.active && (other.p - me.p).norm() <= band)
        .count()
}

/// `-r_collision` per neighbor inside `2R + τ`, plus `-r_boundary` when
/// outside the workspace.
pub fn crash_reward(
    i: usize,
    swarm: &[DroneKinematics],
    workspace: &Workspace,
    params: &RewardParams,
) -> f64 {
    let w = &params.weights;
    let mut r = -w.r_collision * proximity_violations(i, swarm, params) as f64;
    if !workspace.contains(&swarm[i].p) {
        r -= w.r_boundary;
    }
    r
}

/// Everything needed to score one drone's transition.
#[derive(Clone, Copy, Debug)]
pub struct TransitionContext<'a> {
    pub drone: usize,
    pub p_prev: Vec3,
    pub target: Vec3,
    pub passed: bool,
    pub omega: Vec3,
    pub a_prev: &'a [f64; 4],
    pub a_now: &'a [f64; 4],
    pub swarm: &'a [DroneKinematics],
    pub workspace: &'a Workspace,
}

pub fn total_reward(ctx: &TransitionContext<'_>, params: &RewardParams) -> RewardBreakdown {
    let p_now = ctx.swarm[ctx.drone].p;
    RewardBreakdown::new(
        target_reward(&ctx.p_prev, &p_now, &ctx.target, ctx.passed, params),
        smooth_reward(&ctx.omega, ctx.a_prev, ctx.a_now, params),
        safe_reward(ctx.drone, ctx.swarm, params),
        crash_reward(ctx.drone, ctx.swarm, ctx.workspace, params),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> RewardParams {
        RewardParams {
            weights: RewardWeights::default(),
            safe_radius: 0.1,
            tolerance: 0.1,
            d_w: 1.0,
        }
    }

    fn kin(p: [f64; 3], v: [f64; 3]) -> DroneKinematics {
        DroneKinematics {
            p: Vec3::from(p),
            v: Vec3::from(v),
            active: true,
        }
    }

    #[test]
    fn smooth_is_never_positive() {
        let p = params();
        let r = smooth_reward(&Vec3::new(1.0, -2.0, 0.5), &[0.1; 4], &[0.3; 4], &p);
        assert!(r < 0.0);
    }

    #[test]
    fn inactive_neighbors_are_ignored() {
        let p = params();
        let mut swarm = [kin([0.0; 3], [0.0; 3]), kin([0.15, 0.0, 0.0], [-1.0, 0.0, 0.0])];
        assert!(safe_reward(0, &swarm, &p) < 0.0);
        assert_eq!(crash_reward(0, &swarm, &Workspace::default(), &p), -0.5);
        swarm[1].active = false;
        assert_eq!(safe_reward(0, &swarm, &p), 0.0);
        assert_eq!(crash_reward(0, &swarm, &Workspace::default(), &p), 0.0);
    }

    #[test]
    fn collision_penalties_accumulate_per_neighbor() {
        let p = params();
        let swarm = [
            kin([0.0, 0.0, 1.0], [0.0; 3]),
            kin([0.2, 0.0, 1.0], [0.0; 3]),
            kin([-0.2, 0.0, 1.0], [0.0; 3]),
        ];
        assert_eq!(crash_reward(0, &swarm, &Workspace::default(), &p), -1.0);
    }

    #[test]
    fn coincident_drones_have_zero_cosine() {
        let p = params();
        let swarm = [kin([0.0, 0.0, 1.0], [0.0; 3]), kin([0.0, 0.0, 1.0], [1.0, 0.0, 0.0])];
        assert_eq!(safe_reward(0, &swarm, &p), 0.0);
        assert_eq!(crash_reward(0, &swarm, &Workspace::default(), &p), -0.5);
    }

    proptest! {
        #[test]
        fn safe_and_crash_are_non_positive(
            dp in proptest::array::uniform3(-2.0f64..2.0),
            dv in proptest::array::uniform3(-10.0f64..10.0),
            pz in -1.0f64..12.0,
        ) {
            let p = params();
            let swarm = [kin([0.0, 0.0, pz], [0.0; 3]), kin([dp[0], dp[1], pz + dp[2]], dv)];
            prop_assert!(safe_reward(0, &swarm, &p) <= 0.0);
            prop_assert!(crash_reward(0, &swarm, &Workspace::default(), &p) <= 0.0);
        }

        #[test]
        fn pair_penalty_is_symmetric(
            dp in proptest::array::uniform3(-2.0f64..2.0),
            dv in proptest::array::uniform3(-10.0f64..10.0),
        ) {
            let p = params();
            let (dp, dv) = (Vec3::from(dp), Vec3::from(dv));
            let a = pair_safe_penalty(&dp, &dv, &p);
            let b = pair_safe_penalty(&-dp, &-dv, &p);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn proximity_factor_saturates_inside_two_r(d in 0.0f64..0.2) {
            prop_assert_eq!(proximity_factor(d, &params()), 1.0);
        }

        #[test]
        fn closing_factor_vanishes_far_away(extra in 0.0f64..10.0) {
            let p = params();
            prop_assert_eq!(closing_factor(3.0 * p.safe_radius + p.d_w + extra, &p), 0.0);
        }

        #[test]
        fn progress_is_lipschitz_outside_the_waypoint(
            g in proptest::array::uniform3(-5.0f64..5.0),
            a in proptest::array::uniform3(-5.0f64..5.0),
            step in proptest::array::uniform3(-0.3f64..0.3),
        ) {
            let p = params();
            let g = Vec3::from(g);
            let a = Vec3::from(a);
            let b = a + Vec3::from(step);
            prop_assume!((a - g).norm() >= p.d_w && (b - g).norm() >= p.d_w);
            // dL/dd = d / L peaks at d = d_w, giving the constant 1/sqrt(1 - eta^2)
            let lip = 1.0 / (1.0 - p.weights.eta * p.weights.eta).sqrt();
            let r = target_reward(&a, &b, &g, false, &p);
            prop_assert!(r.abs() <= lip * (b - a).norm() + 1e-12);
        }

        #[test]
        fn progress_sign_is_scale_invariant(
            g in proptest::array::uniform3(-5.0f64..5.0),
            a in proptest::array::uniform3(-5.0f64..5.0),
            b in proptest::array::uniform3(-5.0f64..5.0),
            s in 1.0f64..4.0,
        ) {
            let p = params();
            let g = Vec3::from(g);
            let (a, b) = (Vec3::from(a), Vec3::from(b));
            prop_assume!((a - g).norm() >= p.d_w && (b - g).norm() >= p.d_w);
            let r1 = target_reward(&a, &b, &g, false, &p);
            let r2 = target_reward(&(g + (a - g) * s), &(g + (b - g) * s), &g, false, &p);
            prop_assume!(r1.abs() > 1e-9);
            prop_assert_eq!(r1.signum(), r2.signum());
        }
    }
}
