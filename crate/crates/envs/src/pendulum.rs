//! Torque-limited pendulum.
//!
//! Angle convention: theta = 0 is the stable downward direction, so the
//! +(g/l) sin(theta) gravity term destabilizes the upright point theta = pi.
//! The swing-up goal is therefore (pi, 0).

use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    /// radians, wrapped to (-pi, pi]
    pub theta: f64,
    /// radians per second
    pub theta_dot: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PendulumParams {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub max_torque: f64,
    pub dt: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams { gravity: 9.8, mass: 1.0, length: 1.0, max_torque: 2.0, dt: 0.1 }
    }
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = (theta + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
        - std::f64::consts::PI;
    if wrapped == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        wrapped
    }
}

/// One explicit-Euler step of
///   theta_dot' = theta_dot + dt * ((g/l) sin(theta) + a / (m l^2))
///   theta'     = theta + dt * theta_dot
/// Torque saturates at +/- max_torque.
pub fn pendulum_step(
    s: PendulumState,
    torque: f64,
    dt: f64,
    params: &PendulumParams,
) -> Result<PendulumState, SimError> {
    if !s.theta.is_finite() || !s.theta_dot.is_finite() || !torque.is_finite() {
        return Err(SimError::NonFinite("pendulum_step input"));
    }
    if dt <= 0.0 {
        return Err(SimError::InvalidTimeStep(dt));
    }
    let a = torque.clamp(-params.max_torque, params.max_torque);
    let accel = (params.gravity / params.length) * s.theta.sin()
        + a / (params.mass * params.length * params.length);
    let theta = wrap_angle(s.theta + dt * s.theta_dot);
    let theta_dot = s.theta_dot + dt * accel;
    if !theta.is_finite() || !theta_dot.is_finite() {
        return Err(SimError::NonFinite("pendulum_step output"));
    }
    Ok(PendulumState { theta, theta_dot })
}
