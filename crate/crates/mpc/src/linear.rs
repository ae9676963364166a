//! Linear reference system: a ground-truth controllable plant usable both
//! as the latent dynamics and as the environment, for validating the
//! planner independently of any learned model.

use cgram_autodiff::{Result, Tensor};
use cgram_envs::{ActionSpace, Env, EnvId, Frame, SimError};
use rand_chacha::ChaCha12Rng;

use crate::eval::StateEncoder;
use crate::planner::LatentDynamics;

/// z' = A z + B a.
pub struct LinearDynamics {
    pub a: Tensor,
    pub b: Tensor,
}

impl LatentDynamics for LinearDynamics {
    fn n_z(&self) -> usize {
        self.a.shape()[0]
    }

    fn n_a(&self) -> usize {
        self.b.shape()[1]
    }

    fn step_batch(&self, z: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let k = z.shape()[0];
        let (n, m) = (self.n_z(), self.n_a());
        let mut out = vec![0.0; k * n];
        let mut az = vec![0.0; n];
        let mut ba = vec![0.0; n];
        for i in 0..k {
            let zrow = &z.data()[i * n..(i + 1) * n];
            let arow = &actions.data()[i * m..(i + 1) * m];
            cgram_autodiff::kernels::mm(self.a.data(), zrow, n, n, 1, &mut az);
            cgram_autodiff::kernels::mm(self.b.data(), arow, n, m, 1, &mut ba);
            for j in 0..n {
                out[i * n + j] = az[j] + ba[j];
            }
        }
        Tensor::new(vec![k, n], out)
    }
}

/// The same linear map exposed as an `Env`, with the state directly
/// observable (frames are placeholders; pair it with `IdentityEncoder`).
pub struct LinearEnv {
    pub dynamics: LinearDynamics,
    pub action_low: f64,
    pub action_high: f64,
}

impl Env for LinearEnv {
    fn id(&self) -> EnvId {
        EnvId::Pendulum // placeholder tag; never persisted
    }

    fn state_dim(&self) -> usize {
        self.dynamics.n_z()
    }

    fn frame_hw(&self) -> (usize, usize) {
        (1, 1)
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box {
            low: vec![self.action_low; self.dynamics.n_a()],
            high: vec![self.action_high; self.dynamics.n_a()],
        }
    }

    fn dt(&self) -> f64 {
        1.0
    }

    fn sample_initial(&self, _rng: &mut ChaCha12Rng) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }

    fn eval_initial(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }

    fn goal_state(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }

    fn step(&self, state: &[f64], action: &[f64]) -> std::result::Result<Vec<f64>, SimError> {
        if !state.iter().chain(action).all(|v| v.is_finite()) {
            return Err(SimError::NonFinite("linear env step"));
        }
        self.dynamics
            .step(state, action)
            .map_err(|_| SimError::NonFinite("linear env step"))
    }

    fn render(&self, _state: &[f64]) -> Frame {
        Frame::black(1, 1)
    }

    fn is_terminal(&self, _state: &[f64]) -> bool {
        false
    }

    fn error_vec(&self, state: &[f64], goal: &[f64]) -> Vec<f64> {
        state.iter().zip(goal).map(|(s, g)| s - g).collect()
    }
}

/// Encoder for directly observable states: the latent is the state itself.
pub struct IdentityEncoder;

impl StateEncoder for IdentityEncoder {
    fn encode_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }

    fn encode_transition(&self, _x_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

/// Discrete-time double integrator with the given time step: the canonical
/// controllable 2-D test system.
pub fn double_integrator(dt: f64) -> LinearDynamics {
    LinearDynamics {
        a: Tensor::new(vec![2, 2], vec![1.0, dt, 0.0, 1.0]).unwrap(),
        b: Tensor::new(vec![2, 1], vec![0.0, dt]).unwrap(),
    }
}

/// Mildly unstable controllable 2-D pair. Left alone the state diverges
/// geometrically, so the do-nothing policy is expensive and a working
/// planner shows a large cost reduction.
pub fn unstable_pair() -> LinearDynamics {
    LinearDynamics {
        a: Tensor::new(vec![2, 2], vec![1.05, 0.3, 0.0, 1.05]).unwrap(),
        b: Tensor::new(vec![2, 1], vec![0.0, 0.3]).unwrap(),
    }
}
