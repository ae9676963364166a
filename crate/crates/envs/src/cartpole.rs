//! Frictionless cart-pole with a point-mass pole.
//!
//! Angle convention: theta = 0 is the upright direction (the balancing
//! goal); positive theta leans toward +x. Equations of motion:
//!
//!   x''     = (F + m sin(th) (l th'^2 - g cos(th))) / (M + m sin^2(th))
//!   theta'' = (g sin(th) - x'' cos(th)) / l
//!
//! integrated with explicit Euler.

use crate::pendulum::wrap_angle;
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleState {
    /// cart position, meters
    pub x: f64,
    /// cart velocity, m/s
    pub x_dot: f64,
    /// pole angle from upright, radians
    pub theta: f64,
    /// pole angular velocity, rad/s
    pub theta_dot: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub force_mag: f64,
    pub track_half_length: f64,
    pub dt: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.8,
            force_mag: 1.0,
            track_half_length: 2.4,
            dt: 0.1,
        }
    }
}

/// Continuous-time accelerations (x'', theta'') at the given state and force.
pub fn cartpole_accel(s: &CartPoleState, force: f64, p: &CartPoleParams) -> (f64, f64) {
    let (sin_t, cos_t) = s.theta.sin_cos();
    let m = p.pole_mass;
    let l = p.pole_length;
    let denom = p.cart_mass + m * sin_t * sin_t;
    let x_acc = (force + m * sin_t * (l * s.theta_dot * s.theta_dot - p.gravity * cos_t)) / denom;
    let theta_acc = (p.gravity * sin_t - x_acc * cos_t) / l;
    (x_acc, theta_acc)
}

/// One explicit-Euler step; the force saturates at +/- force_mag.
pub fn cartpole_step(
    s: CartPoleState,
    force: f64,
    dt: f64,
    params: &CartPoleParams,
) -> Result<CartPoleState, SimError> {
    if ![s.x, s.x_dot, s.theta, s.theta_dot, force].iter().all(|v| v.is_finite()) {
        return Err(SimError::NonFinite("cartpole_step input"));
    }
    if dt <= 0.0 {
        return Err(SimError::InvalidTimeStep(dt));
    }
    let f = force.clamp(-params.force_mag, params.force_mag);
    let (x_acc, theta_acc) = cartpole_accel(&s, f, params);
    let next = CartPoleState {
        x: s.x + dt * s.x_dot,
        x_dot: s.x_dot + dt * x_acc,
        theta: wrap_angle(s.theta + dt * s.theta_dot),
        theta_dot: s.theta_dot + dt * theta_acc,
    };
    if ![next.x, next.x_dot, next.theta, next.theta_dot].iter().all(|v| v.is_finite()) {
        return Err(SimError::NonFinite("cartpole_step output"));
    }
    Ok(next)
}

/// Total mechanical energy (kinetic plus potential, zero at pivot height).
pub fn cartpole_energy(s: &CartPoleState, p: &CartPoleParams) -> f64 {
    let m = p.pole_mass;
    let l = p.pole_length;
    let kinetic = 0.5 * p.cart_mass * s.x_dot * s.x_dot
        + 0.5
            * m
            * (s.x_dot * s.x_dot
                + 2.0 * l * s.x_dot * s.theta_dot * s.theta.cos()
                + l * l * s.theta_dot * s.theta_dot);
    kinetic + m * p.gravity * l * s.theta.cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Classic fourth-order Runge-Kutta at a fine step, used only as the
    /// reference integrator in tests.
    fn rk4_rollout(mut s: CartPoleState, force: f64, dt: f64, steps: usize) -> CartPoleState {
        let p = CartPoleParams::default();
        let deriv = |st: &CartPoleState| -> [f64; 4] {
            let (xa, ta) = cartpole_accel(st, force, &p);
            [st.x_dot, xa, st.theta_dot, ta]
        };
        for _ in 0..steps {
            let k1 = deriv(&s);
            let mid1 = CartPoleState {
                x: s.x + 0.5 * dt * k1[0],
                x_dot: s.x_dot + 0.5 * dt * k1[1],
                theta: s.theta + 0.5 * dt * k1[2],
                theta_dot: s.theta_dot + 0.5 * dt * k1[3],
            };
            let k2 = deriv(&mid1);
            let mid2 = CartPoleState {
                x: s.x + 0.5 * dt * k2[0],
                x_dot: s.x_dot + 0.5 * dt * k2[1],
                theta: s.theta + 0.5 * dt * k2[2],
                theta_dot: s.theta_dot + 0.5 * dt * k2[3],
            };
            let k3 = deriv(&mid2);
            let end = CartPoleState {
                x: s.x + dt * k3[0],
                x_dot: s.x_dot + dt * k3[1],
                theta: s.theta + dt * k3[2],
                theta_dot: s.theta_dot + dt * k3[3],
            };
            let k4 = deriv(&end);
            s = CartPoleState {
                x: s.x + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                x_dot: s.x_dot + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                theta: s.theta + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
                theta_dot: s.theta_dot + dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
            };
        }
        s
    }

    #[test]
    fn upright_equilibrium_is_fixed_point() {
        let s = CartPoleState { x: 0.0, x_dot: 0.0, theta: 0.0, theta_dot: 0.0 };
        let next = cartpole_step(s, 0.0, 0.1, &CartPoleParams::default()).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn push_right_signs_match_fine_step_oracle() {
        let p = CartPoleParams::default();
        let s = CartPoleState { x: 0.0, x_dot: 0.0, theta: 0.0, theta_dot: 0.0 };
        let (x_acc, theta_acc) = cartpole_accel(&s, 1.0, &p);
        assert!(x_acc > 0.0);
        assert!(theta_acc != 0.0);

        // integrate 0.1 s with RK4 at dt = 1e-4 and compare sign structure
        let fine = rk4_rollout(s, 1.0, 1e-4, 1000);
        assert_eq!(fine.x_dot.signum(), x_acc.signum());
        assert_eq!(fine.theta_dot.signum(), theta_acc.signum());
    }

    #[test]
    fn unforced_energy_drift_small_at_fine_step() {
        let p = CartPoleParams::default();
        let start = CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            theta: std::f64::consts::PI / 10.0,
            theta_dot: 0.0,
        };
        let mut euler = start;
        for _ in 0..10 {
            euler = cartpole_step(euler, 0.0, 0.01, &p).unwrap();
        }
        let fine = rk4_rollout(start, 0.0, 0.01, 10);
        let e_euler = cartpole_energy(&euler, &p);
        let e_fine = cartpole_energy(&fine, &p);
        assert!(
            (e_euler - e_fine).abs() <= 0.01 * e_fine.abs(),
            "euler {e_euler} vs rk4 {e_fine}"
        );
    }

    #[test]
    fn non_finite_input_rejected() {
        let s = CartPoleState { x: 0.0, x_dot: f64::INFINITY, theta: 0.0, theta_dot: 0.0 };
        assert!(cartpole_step(s, 0.0, 0.1, &CartPoleParams::default()).is_err());
    }
}
