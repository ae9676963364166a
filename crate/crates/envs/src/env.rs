//! Uniform interface over the two benchmark systems.
//!
//! States cross the trait boundary as flat f64 vectors so the experiment
//! layer can hold a `Box<dyn Env>` chosen from configuration; the typed
//! steppers in `pendulum`/`cartpole` stay the single source of dynamics.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::cartpole::{cartpole_step, CartPoleParams, CartPoleState};
use crate::pendulum::{pendulum_step, wrap_angle, PendulumParams, PendulumState};
use crate::render::{render_cartpole, render_pendulum, Frame, CARTPOLE_FRAME, PENDULUM_FRAME};
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvId {
    Pendulum,
    CartPole,
}

impl EnvId {
    pub fn as_u8(self) -> u8 {
        match self {
            EnvId::Pendulum => 0,
            EnvId::CartPole => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(EnvId::Pendulum),
            1 => Some(EnvId::CartPole),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvId::Pendulum => "pendulum",
            EnvId::CartPole => "cartpole",
        }
    }
}

/// Admissible action set of an environment.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    /// Axis-aligned box; sampling is uniform per component.
    Box { low: Vec<f64>, high: Vec<f64> },
    /// Finite set of action vectors; sampling is uniform over the set.
    Discrete { choices: Vec<Vec<f64>> },
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Box { low, .. } => low.len(),
            ActionSpace::Discrete { choices } => choices[0].len(),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha12Rng) -> Vec<f64> {
        match self {
            ActionSpace::Box { low, high } => low
                .iter()
                .zip(high)
                .map(|(&lo, &hi)| rng.gen_range(lo..=hi))
                .collect(),
            ActionSpace::Discrete { choices } => {
                choices[rng.gen_range(0..choices.len())].clone()
            }
        }
    }

    pub fn contains(&self, action: &[f64]) -> bool {
        match self {
            ActionSpace::Box { low, high } => {
                action.len() == low.len()
                    && action
                        .iter()
                        .zip(low.iter().zip(high))
                        .all(|(a, (&lo, &hi))| *a >= lo && *a <= hi)
            }
            ActionSpace::Discrete { choices } => choices.iter().any(|c| c == action),
        }
    }
}

/// Environment operations needed by collection and closed-loop control.
pub trait Env: Send + Sync {
    fn id(&self) -> EnvId;
    fn state_dim(&self) -> usize;
    fn frame_hw(&self) -> (usize, usize);
    fn action_space(&self) -> ActionSpace;
    fn dt(&self) -> f64;
    /// Random initial state for data collection.
    fn sample_initial(&self, rng: &mut ChaCha12Rng) -> Vec<f64>;
    /// Canonical evaluation start state for the control task.
    fn eval_initial(&self) -> Vec<f64>;
    /// Goal state of the control task.
    fn goal_state(&self) -> Vec<f64>;
    fn step(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>, SimError>;
    fn render(&self, state: &[f64]) -> Frame;
    fn is_terminal(&self, state: &[f64]) -> bool;
    /// State error with angle components wrapped, for quadratic costs.
    fn error_vec(&self, state: &[f64], goal: &[f64]) -> Vec<f64>;
}

pub struct PendulumEnv {
    pub params: PendulumParams,
}

impl PendulumEnv {
    pub fn new(params: PendulumParams) -> Self {
        PendulumEnv { params }
    }
}

impl Default for PendulumEnv {
    fn default() -> Self {
        PendulumEnv::new(PendulumParams::default())
    }
}

impl Env for PendulumEnv {
    fn id(&self) -> EnvId {
        EnvId::Pendulum
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn frame_hw(&self) -> (usize, usize) {
        (PENDULUM_FRAME, PENDULUM_FRAME)
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box { low: vec![-self.params.max_torque], high: vec![self.params.max_torque] }
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn sample_initial(&self, rng: &mut ChaCha12Rng) -> Vec<f64> {
        vec![
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.gen_range(-1.0..1.0),
        ]
    }

    fn eval_initial(&self) -> Vec<f64> {
        // hanging at rest: the swing-up start
        vec![0.0, 0.0]
    }

    fn goal_state(&self) -> Vec<f64> {
        // upright under the down-zero convention
        vec![std::f64::consts::PI, 0.0]
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>, SimError> {
        let s = PendulumState { theta: state[0], theta_dot: state[1] };
        let next = pendulum_step(s, action[0], self.params.dt, &self.params)?;
        Ok(vec![next.theta, next.theta_dot])
    }

    fn render(&self, state: &[f64]) -> Frame {
        render_pendulum(&PendulumState { theta: state[0], theta_dot: state[1] })
    }

    fn is_terminal(&self, _state: &[f64]) -> bool {
        false
    }

    fn error_vec(&self, state: &[f64], goal: &[f64]) -> Vec<f64> {
        vec![wrap_angle(state[0] - goal[0]), state[1] - goal[1]]
    }
}

pub struct CartPoleEnv {
    pub params: CartPoleParams,
}

impl CartPoleEnv {
    pub fn new(params: CartPoleParams) -> Self {
        CartPoleEnv { params }
    }
}

impl Default for CartPoleEnv {
    fn default() -> Self {
        CartPoleEnv::new(CartPoleParams::default())
    }
}

impl Env for CartPoleEnv {
    fn id(&self) -> EnvId {
        EnvId::CartPole
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn frame_hw(&self) -> (usize, usize) {
        (CARTPOLE_FRAME, CARTPOLE_FRAME)
    }

    fn action_space(&self) -> ActionSpace {
        let f = self.params.force_mag;
        ActionSpace::Discrete { choices: vec![vec![-f], vec![f]] }
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn sample_initial(&self, rng: &mut ChaCha12Rng) -> Vec<f64> {
        let tenth_pi = std::f64::consts::PI / 10.0;
        vec![
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-tenth_pi..tenth_pi),
            rng.gen_range(-0.5..0.5),
        ]
    }

    fn eval_initial(&self) -> Vec<f64> {
        // pole tilted a tenth turn from the top, at rest
        vec![0.0, 0.0, std::f64::consts::PI / 10.0, 0.0]
    }

    fn goal_state(&self) -> Vec<f64> {
        vec![0.0, 0.0, 0.0, 0.0]
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>, SimError> {
        let s = CartPoleState {
            x: state[0],
            x_dot: state[1],
            theta: state[2],
            theta_dot: state[3],
        };
        let next = cartpole_step(s, action[0], self.params.dt, &self.params)?;
        Ok(vec![next.x, next.x_dot, next.theta, next.theta_dot])
    }

    fn render(&self, state: &[f64]) -> Frame {
        render_cartpole(
            &CartPoleState {
                x: state[0],
                x_dot: state[1],
                theta: state[2],
                theta_dot: state[3],
            },
            &self.params,
        )
    }

    fn is_terminal(&self, state: &[f64]) -> bool {
        state[0].abs() > self.params.track_half_length
    }

    fn error_vec(&self, state: &[f64], goal: &[f64]) -> Vec<f64> {
        vec![
            state[0] - goal[0],
            state[1] - goal[1],
            wrap_angle(state[2] - goal[2]),
            state[3] - goal[3],
        ]
    }
}

/// Construct the environment named by `id` with default parameters.
pub fn make_env(id: EnvId) -> Box<dyn Env> {
    match id {
        EnvId::Pendulum => Box::new(PendulumEnv::default()),
        EnvId::CartPole => Box::new(CartPoleEnv::default()),
    }
}
