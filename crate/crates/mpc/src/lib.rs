//! Random-shooting model-predictive control in latent space, plus the
//! closed-loop evaluation against the true simulators.

mod eval;
pub mod linear;
mod planner;

pub use eval::{
    closed_loop_control, open_loop_rollout, pair_mse, zero_action_cost, CostReport,
    NeuralEncoder, StateEncoder,
};
pub use planner::{
    derive_seed, latent_rollout_cost, plan_action, plan_sequence, quad_form, LatentDynamics,
    MpcConfig, Plan,
};
