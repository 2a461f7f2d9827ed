//! Simplified quadrotor model: point-mass translation driven by collective
//! mass-normalized thrust along the body z axis, linear body-frame drag,
//! quaternion attitude kinematics, and first-order lag on thrust and body
//! rate commands.
//!
//! Quaternions are scalar-first `(w, x, y, z)`, composed with the Hamilton
//! product, and rotate body-frame vectors into the world frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `|q| - 1` accepted by [`rotation_from_quat`].
pub const UNIT_QUAT_TOL: f64 = 1e-6;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(self, other: Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Quat {
        self.scale(1.0 / self.norm())
    }

    pub fn scale(self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn add(self, o: Quat) -> Quat {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn mul(self, rhs: Quat) -> Quat {
        let (a1, b1, c1, d1) = (self.w, self.x, self.y, self.z);
        let (a2, b2, c2, d2) = (rhs.w, rhs.x, rhs.y, rhs.z);
        Quat::new(
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        )
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotation matrix without the unit-norm check; callers guarantee `|q| = 1`.
    pub(crate) fn rotation_unchecked(self) -> Matrix3<f64> {
        let Quat { w, x, y, z } = self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }
}

/// Body→world rotation matrix of a unit quaternion.
pub fn rotation_from_quat(q: Quat) -> Result<Matrix3<f64>> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_QUAT_TOL {
        return Err(Error::InvalidState(format!(
            "quaternion norm {n} is not within {UNIT_QUAT_TOL} of 1"
        )));
    }
    Ok(q.rotation_unchecked())
}

/// `q̇ = ½ q ⊗ (0, ω)` with `ω` expressed in the body frame.
pub fn quat_derivative(q: Quat, omega: &Vec3) -> Quat {
    q.mul(Quat::new(0.0, omega.x, omega.y, omega.z)).scale(0.5)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadState {
    pub p: Vec3,
    pub v: Vec3,
    pub q: Quat,
    /// Mass-normalized collective thrust, m/s².
    pub thrust: f64,
    /// Body rate, rad/s.
    pub omega: Vec3,
}

impl QuadState {
    /// At rest at `p`, level, with thrust balancing gravity.
    pub fn hover_at(p: Vec3, gravity: &Vec3) -> Self {
        QuadState {
            p,
            v: Vec3::zeros(),
            q: Quat::IDENTITY,
            thrust: gravity.norm(),
            omega: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.q.is_finite()
            && self.thrust.is_finite()
            && self.omega.iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActuatorCommand {
    /// Desired mass-normalized thrust, m/s².
    pub thrust: f64,
    /// Desired body rate, rad/s.
    pub omega: Vec3,
}

impl ActuatorCommand {
    pub fn hover(gravity: &Vec3) -> Self {
        ActuatorCommand {
            thrust: gravity.norm(),
            omega: Vec3::zeros(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagMode {
    /// Explicit Euler on the first-order lag ODE.
    #[default]
    Euler,
    /// Exact exponential decay over each substep.
    ExactDecay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsParams {
    pub gravity: [f64; 3],
    /// Diagonal linear drag coefficients in the body frame, 1/s.
    pub drag: [f64; 3],
    /// Thrust lag time constant, s.
    pub k_thrust: f64,
    /// Body-rate lag time constant, s.
    pub k_omega: f64,
    /// Integration substep, s.
    pub dt_physics: f64,
    /// Thrust-to-weight ratio; realized thrust is clamped to `[0, ratio·|g|]`.
    pub thrust_to_weight: f64,
    pub lag_mode: LagMode,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            gravity: [0.0, 0.0, -STANDARD_GRAVITY],
            drag: [0.29, 0.29, 0.38],
            k_thrust: 0.05,
            k_omega: 0.05,
            dt_physics: 0.001,
            thrust_to_weight: 3.5,
            lag_mode: LagMode::Euler,
        }
    }
}

impl DynamicsParams {
    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }

    pub fn max_thrust(&self) -> f64 {
        self.thrust_to_weight * self.gravity().norm()
    }

    pub fn validate(&self) -> Result<()> {
        if self.drag.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::config("dynamics.drag: coefficients must be >= 0"));
        }
        if !(self.k_thrust > 0.0) || !(self.k_omega > 0.0) {
            return Err(Error::config(
                "dynamics.k_thrust / dynamics.k_omega: time constants must be > 0",
            ));
        }
        if !(self.dt_physics > 0.0) {
            return Err(Error::config("dynamics.dt_physics: must be > 0"));
        }
        if self.lag_mode == LagMode::Euler && self.dt_physics > self.k_thrust.min(self.k_omega) {
            return Err(Error::config(
                "dynamics.dt_physics: must not exceed the lag time constants with Euler lag",
            ));
        }
        if !(self.thrust_to_weight > 0.0) {
            return Err(Error::config("dynamics.thrust_to_weight: must be > 0"));
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return Err(Error::config("dynamics.gravity: must be finite"));
        }
        Ok(())
    }

    /// Number of physics substeps in one control interval.
    pub fn substeps(&self, dt_control: f64) -> Result<usize> {
        let ratio = dt_control / self.dt_physics;
        let n = ratio.round();
        if !(n >= 1.0) || (ratio - n).abs() > 1e-6 {
            return Err(Error::config(format!(
                "control interval {dt_control} s is not an integer multiple of the physics step {} s",
                self.dt_physics
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDerivative {
    pub p_dot: Vec3,
    pub v_dot: Vec3,
    pub q_dot: Quat,
}

/// Rigid-body part of the model at the state's current thrust and body rate.
pub fn state_derivative(s: &QuadState, params: &DynamicsParams) -> StateDerivative {
    let r = s.q.rotation_unchecked();
    StateDerivative {
        p_dot: s.v,
        v_dot: translational_accel(&r, s, params),
        q_dot: quat_derivative(s.q, &s.omega),
    }
}

#[inline]
fn translational_accel(r: &Matrix3<f64>, s: &QuadState, params: &DynamicsParams) -> Vec3 {
    let body_v = r.transpose() * s.v;
    let drag_body = Vec3::new(
        params.drag[0] * body_v.x,
        params.drag[1] * body_v.y,
        params.drag[2] * body_v.z,
    );
    params.gravity() + r.column(2) * s.thrust - r * drag_body
}

/// One lag update of `(thrust, omega)` toward the command over `dt`.
pub fn actuator_lag_step(
    thrust: f64,
    omega: &Vec3,
    cmd: &ActuatorCommand,
    dt: f64,
    params: &DynamicsParams,
) -> (f64, Vec3) {
    let (at, aw) = match params.lag_mode {
        LagMode::Euler => (dt / params.k_thrust, dt / params.k_omega),
        LagMode::ExactDecay => (
            1.0 - (-dt / params.k_thrust).exp(),
            1.0 - (-dt / params.k_omega).exp(),
        ),
    };
    let t = thrust + at * (cmd.thrust - thrust);
    let w = omega + (cmd.omega - omega) * aw;
    (t, w)
}

/// Advances one control interval: `dt_control / dt_physics` substeps, each
/// applying the actuator lag (with thrust saturation) and then a
/// semi-implicit Euler update of velocity, position and attitude.
pub fn step(
    s: &QuadState,
    cmd: &ActuatorCommand,
    dt_control: f64,
    params: &DynamicsParams,
) -> Result<QuadState> {
    let n = params.substeps(dt_control)?;
    let dt = params.dt_physics;
    let t_max = params.max_thrust();
    let mut next = s.clone();
    for _ in 0..n {
        let (t, w) = actuator_lag_step(next.thrust, &next.omega, cmd, dt, params);
        next.thrust = t.clamp(0.0, t_max);
        next.omega = w;

        let r = next.q.rotation_unchecked();
        let accel = translational_accel(&r, &next, params);
        next.v += accel * dt;
        next.p += next.v * dt;
        let q_dot = quat_derivative(next.q, &next.omega);
        next.q = next.q.add(q_dot.scale(dt)).normalized();
    }
    if !next.is_finite() {
        return Err(Error::InvalidState(
            "non-finite state after integration".into(),
        ));
    }
    Ok(next)
}

/// High-resolution fourth-order Runge–Kutta integration of the full model,
/// including the continuous actuator lag, without thrust saturation.
/// Intended as an accuracy reference for the production stepper.
pub mod reference {
    use super::*;

    #[derive(Clone, Copy)]
    struct Full {
        p: Vec3,
        v: Vec3,
        q: Quat,
        t: f64,
        w: Vec3,
    }

    impl Full {
        fn axpy(&self, k: &Full, h: f64) -> Full {
            Full {
                p: self.p + k.p * h,
                v: self.v + k.v * h,
                q: self.q.add(k.q.scale(h)),
                t: self.t + k.t * h,
                w: self.w + k.w * h,
            }
        }
    }

    fn deriv(x: &Full, cmd: &ActuatorCommand, params: &DynamicsParams) -> Full {
        let s = QuadState {
            p: x.p,
            v: x.v,
            q: x.q,
            thrust: x.t,
            omega: x.w,
        };
        let d = state_derivative(&s, params);
        Full {
            p: d.p_dot,
            v: d.v_dot,
            q: d.q_dot,
            t: (cmd.thrust - x.t) / params.k_thrust,
            w: (cmd.omega - x.w) / params.k_omega,
        }
    }

    pub fn integrate(
        s: &QuadState,
        cmd: &ActuatorCommand,
        duration: f64,
        substeps: usize,
        params: &DynamicsParams,
    ) -> QuadState {
        let h = duration / substeps as f64;
        let mut x = Full {
            p: s.p,
            v: s.v,
            q: s.q,
            t: s.thrust,
            w: s.omega,
        };
        for _ in 0..substeps {
            let k1 = deriv(&x, cmd, params);
            let k2 = deriv(&x.axpy(&k1, h / 2.0), cmd, params);
            let k3 = deriv(&x.axpy(&k2, h / 2.0), cmd, params);
            let k4 = deriv(&x.axpy(&k3, h), cmd, params);
            let mut next = x;
            next.p += (k1.p + k2.p * 2.0 + k3.p * 2.0 + k4.p) * (h / 6.0);
            next.v += (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * (h / 6.0);
            next.q = next
                .q
                .add(k1.q.add(k2.q.scale(2.0)).add(k3.q.scale(2.0)).add(k4.q).scale(h / 6.0))
                .normalized();
            next.t += (k1.t + 2.0 * k2.t + 2.0 * k3.t + k4.t) * (h / 6.0);
            next.w += (k1.w + k2.w * 2.0 + k3.w * 2.0 + k4.w) * (h / 6.0);
            x = next;
        }
        QuadState {
            p: x.p,
            v: x.v,
            q: x.q,
            thrust: x.t,
            omega: x.w,
        }
    }
}
