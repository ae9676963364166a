//! Ground-truth simulators, frame rendering, and dataset collection for the
//! pendulum and cart-pole benchmarks.

mod cartpole;
mod collect;
pub mod dataset;
mod env;
mod pendulum;
mod render;

pub use cartpole::{cartpole_accel, cartpole_energy, cartpole_step, CartPoleParams, CartPoleState};
pub use collect::{collect_dataset, TransitionRecord};
pub use env::{make_env, ActionSpace, CartPoleEnv, Env, EnvId, PendulumEnv};
pub use pendulum::{pendulum_step, wrap_angle, PendulumParams, PendulumState};
pub use render::{
    render_cartpole, render_cartpole_checked, render_pendulum, Frame, ObservationPair,
    CARTPOLE_FRAME, PENDULUM_FRAME, PIXELS_PER_METER,
};

use std::fmt;

/// Simulator errors.
#[derive(Debug, Clone, Copy)]
pub enum SimError {
    /// A state or action contained NaN/Inf.
    NonFinite(&'static str),
    /// The integration step was not positive.
    InvalidTimeStep(f64),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::NonFinite(ctx) => write!(f, "non-finite value in {ctx}"),
            SimError::InvalidTimeStep(dt) => write!(f, "time step must be positive, got {dt}"),
        }
    }
}

impl std::error::Error for SimError {}
