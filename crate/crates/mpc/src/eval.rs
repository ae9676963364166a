//! Closed-loop control against the true simulator and open-loop rollouts.

use cgram_autodiff::{Result, Tensor};
use cgram_envs::{Env, ObservationPair};
use cgram_model::Model;

use crate::planner::{derive_seed, plan_sequence, quad_form, LatentDynamics, MpcConfig};

/// Maps original states into the latent space (hiding rendering/encoding).
pub trait StateEncoder {
    /// Encode a motionless state (duplicated-frame observation).
    fn encode_state(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Encode a real transition observation (previous frame, current frame).
    fn encode_transition(&self, x_prev: &[f64], x: &[f64]) -> Result<Vec<f64>>;
}

/// Renders states through the environment and encodes with the model mean.
pub struct NeuralEncoder<'a> {
    pub model: &'a Model,
    pub env: &'a dyn Env,
}

impl StateEncoder for NeuralEncoder<'_> {
    fn encode_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        let obs = ObservationPair::still(self.env.render(x));
        self.model.encode_pair_mean(&obs)
    }

    fn encode_transition(&self, x_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let obs = ObservationPair::new(self.env.render(x_prev), self.env.render(x));
        self.model.encode_pair_mean(&obs)
    }
}

/// Closed-loop outcome in the original state space.
#[derive(Debug, Clone)]
pub struct CostReport {
    /// sum of the selected candidates' latent plan costs
    pub latent_plan_cost: f64,
    /// accumulated e^T e + a^T R a in the original space (wrapped errors)
    pub original_cost: f64,
    pub action_sequence: Vec<Vec<f64>>,
    pub state_trajectory: Vec<Vec<f64>>,
    /// latent state used for planning at each executed step
    pub latent_trajectory: Vec<Vec<f64>>,
    /// true if the environment terminated before the episode finished
    pub truncated: bool,
    pub reached_goal: bool,
}

/// Run the planner against the true environment for `episode_length` steps.
///
/// The initial and goal states are encoded from still observations; after
/// each executed action the planning latent advances through the latent
/// dynamics (or is re-encoded from the rendered observation when
/// `re_encode` is set). The original-space cost charges the wrapped state
/// error before each action plus a^T R a, matching the latent convention.
pub fn closed_loop_control(
    env: &dyn Env,
    encoder: &dyn StateEncoder,
    dynamics: &dyn LatentDynamics,
    x0: &[f64],
    x_goal: &[f64],
    cfg: &MpcConfig,
    seed: u64,
) -> Result<CostReport> {
    cfg.validate(dynamics.n_z(), dynamics.n_a())?;
    let space = env.action_space();
    let mut z = encoder.encode_state(x0)?;
    let z_goal = encoder.encode_state(x_goal)?;

    let mut report = CostReport {
        latent_plan_cost: 0.0,
        original_cost: 0.0,
        action_sequence: Vec::new(),
        state_trajectory: vec![x0.to_vec()],
        latent_trajectory: vec![z.clone()],
        truncated: false,
        reached_goal: false,
    };

    let mut x = x0.to_vec();
    let mut step_idx = 0usize;
    'episode: while step_idx < cfg.episode_length {
        if env.is_terminal(&x) {
            report.truncated = true;
            break;
        }
        let plan = plan_sequence(dynamics, &z, &z_goal, cfg, &space, derive_seed(seed, step_idx as u64))?;
        report.latent_plan_cost += plan.cost;

        for action in plan.actions.iter().take(cfg.control_horizon) {
            let err = env.error_vec(&x, x_goal);
            report.original_cost +=
                err.iter().map(|e| e * e).sum::<f64>() + quad_form(&cfg.r, action);

            let x_next = env.step(&x, action).map_err(|e| {
                cgram_autodiff::AdError::Usage(format!("environment step failed: {e}"))
            })?;
            z = dynamics.step(&z, action)?;
            if cfg.re_encode {
                z = encoder.encode_transition(&x, &x_next)?;
            }
            report.action_sequence.push(action.clone());
            report.state_trajectory.push(x_next.clone());
            report.latent_trajectory.push(z.clone());
            x = x_next;
            step_idx += 1;

            let err_after = env.error_vec(&x, x_goal);
            let dist = err_after.iter().map(|e| e * e).sum::<f64>().sqrt();
            if cfg.goal_tolerance > 0.0 && dist <= cfg.goal_tolerance {
                report.reached_goal = true;
                break 'episode;
            }
            if step_idx >= cfg.episode_length {
                break;
            }
        }
    }
    Ok(report)
}

/// Original-space cost of the do-nothing policy over the same horizon,
/// the reference for cost-reduction checks.
pub fn zero_action_cost(
    env: &dyn Env,
    x0: &[f64],
    x_goal: &[f64],
    cfg: &MpcConfig,
) -> Result<f64> {
    let n_a = env.action_space().dim();
    let zero = vec![0.0; n_a];
    let mut x = x0.to_vec();
    let mut cost = 0.0;
    for _ in 0..cfg.episode_length {
        if env.is_terminal(&x) {
            break;
        }
        let err = env.error_vec(&x, x_goal);
        cost += err.iter().map(|e| e * e).sum::<f64>() + quad_form(&cfg.r, &zero);
        x = env
            .step(&x, &zero)
            .map_err(|e| cgram_autodiff::AdError::Usage(format!("environment step failed: {e}")))?;
    }
    Ok(cost)
}

/// Decoded open-loop prediction: encode the first observation's mean, then
/// repeatedly apply the transition and decode. Returns len(actions) + 1
/// observation pairs.
pub fn open_loop_rollout(
    model: &Model,
    o0: &ObservationPair,
    actions: &[Vec<f64>],
) -> Result<Vec<ObservationPair>> {
    let mut z = model.encode_pair_mean(o0)?;
    let eval = model.transition_eval()?;
    let mut out = Vec::with_capacity(actions.len() + 1);
    out.push(decode_pair(model, &z)?);
    for action in actions {
        let (next, _) = eval.step(&z, action)?;
        z = next;
        out.push(decode_pair(model, &z)?);
    }
    Ok(out)
}

fn decode_pair(model: &Model, z: &[f64]) -> Result<ObservationPair> {
    let zt = Tensor::new(vec![1, z.len()], z.to_vec())?;
    let frames = model.decode_eval(&zt)?;
    let (h, w) = (model.config.frame_h, model.config.frame_w);
    let pix = h * w;
    let prev = cgram_envs::Frame {
        height: h,
        width: w,
        pixels: frames.data()[..pix].to_vec(),
    };
    let curr = cgram_envs::Frame {
        height: h,
        width: w,
        pixels: frames.data()[pix..2 * pix].to_vec(),
    };
    Ok(ObservationPair::new(prev, curr))
}

/// Mean squared pixel error over both channels of two observation pairs.
pub fn pair_mse(a: &ObservationPair, b: &ObservationPair) -> f64 {
    let pa = a.to_channels();
    let pb = b.to_channels();
    let n = pa.len() as f64;
    pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}
