//! Random-shooting planner over latent dynamics.

use cgram_autodiff::{AdError, Result, Tensor};
use cgram_envs::ActionSpace;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Latent transition map used by the planner.
pub trait LatentDynamics {
    fn n_z(&self) -> usize;
    fn n_a(&self) -> usize;
    /// Advance a batch of latent states: z \[K, n_z\], a \[K, n_a\].
    fn step_batch(&self, z: &Tensor, a: &Tensor) -> Result<Tensor>;

    fn step(&self, z: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let zt = Tensor::new(vec![1, self.n_z()], z.to_vec())?;
        let at = Tensor::new(vec![1, self.n_a()], a.to_vec())?;
        Ok(self.step_batch(&zt, &at)?.data().to_vec())
    }
}

impl LatentDynamics for cgram_model::TransitionEval<'_> {
    fn n_z(&self) -> usize {
        cgram_model::TransitionEval::n_z(self)
    }

    fn n_a(&self) -> usize {
        cgram_model::TransitionEval::n_a(self)
    }

    fn step_batch(&self, z: &Tensor, a: &Tensor) -> Result<Tensor> {
        cgram_model::TransitionEval::step_batch(self, z, a)
    }
}

/// Planner and closed-loop evaluation settings.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    /// prediction horizon H (the planner simulates H-1 steps)
    pub horizon: usize,
    /// number of random candidate sequences K
    pub n_candidates: usize,
    /// latent state cost matrix Q
    pub q: Tensor,
    /// action cost matrix R
    pub r: Tensor,
    /// closed-loop episode length T
    pub episode_length: usize,
    /// actions executed from each plan before replanning
    pub control_horizon: usize,
    /// stop when the wrapped original-state error norm falls below this
    /// (0 disables early stopping)
    pub goal_tolerance: f64,
    /// re-encode the rendered observation each step instead of advancing
    /// the latent state open-loop
    pub re_encode: bool,
}

impl MpcConfig {
    pub fn new(n_z: usize, n_a: usize) -> Self {
        let mut r = Tensor::zeros(&[n_a, n_a]);
        for i in 0..n_a {
            r.data_mut()[i * n_a + i] = 0.01;
        }
        MpcConfig {
            horizon: 10,
            n_candidates: 1000,
            q: Tensor::eye(n_z),
            r,
            episode_length: 50,
            control_horizon: 1,
            goal_tolerance: 0.0,
            re_encode: false,
        }
    }

    pub fn validate(&self, n_z: usize, n_a: usize) -> Result<()> {
        if self.horizon < 2 {
            return Err(AdError::Usage(format!("horizon must be >= 2, got {}", self.horizon)));
        }
        if self.n_candidates < 1 {
            return Err(AdError::Usage("n_candidates must be >= 1".into()));
        }
        if self.control_horizon < 1 || self.control_horizon > self.horizon - 1 {
            return Err(AdError::Usage(format!(
                "control_horizon must be in [1, horizon-1], got {}",
                self.control_horizon
            )));
        }
        check_sym_psd(&self.q, n_z, "Q")?;
        check_sym_psd(&self.r, n_a, "R")?;
        Ok(())
    }
}

fn check_sym_psd(m: &Tensor, n: usize, name: &str) -> Result<()> {
    if m.shape() != [n, n] {
        return Err(AdError::Dimension {
            op: "MpcConfig::validate",
            detail: format!("{name} must be {n}x{n}, got {:?}", m.shape()),
        });
    }
    for i in 0..n {
        for j in 0..n {
            if (m.at2(i, j) - m.at2(j, i)).abs() > 1e-10 {
                return Err(AdError::Usage(format!("{name} must be symmetric")));
            }
        }
    }
    // PSD check: Cholesky of M + tiny*I must succeed
    let mut shifted = m.data().to_vec();
    for i in 0..n {
        shifted[i * n + i] += 1e-12;
    }
    let mut l = vec![0.0; n * n];
    cgram_autodiff::kernels::cholesky(&shifted, n, &mut l)
        .map_err(|_| AdError::Usage(format!("{name} must be positive semidefinite")))?;
    Ok(())
}

/// v^T M v with a fixed summation order shared by every cost path.
pub fn quad_form(m: &Tensor, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m.at2(i, j) * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

/// Accumulated cost of one action sequence. For each action, the error
/// e = z_goal - z is charged before the dynamics update:
/// C += e^T Q e + a^T R a; z <- f(z, a).
pub fn latent_rollout_cost(
    dynamics: &dyn LatentDynamics,
    actions: &[Vec<f64>],
    z0: &[f64],
    z_goal: &[f64],
    q: &Tensor,
    r: &Tensor,
) -> Result<f64> {
    let mut z = z0.to_vec();
    let mut cost = 0.0;
    let mut err = vec![0.0; z.len()];
    for action in actions {
        for (e, (&g, &zi)) in err.iter_mut().zip(z_goal.iter().zip(&z)) {
            *e = g - zi;
        }
        cost += quad_form(q, &err) + quad_form(r, action);
        z = dynamics.step(&z, action)?;
    }
    Ok(cost)
}

/// Splitmix64: the seed-derivation mix used everywhere a stream needs to be
/// split reproducibly.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut x = base ^ stream.wrapping_mul(0x9E3779B97F4A7C15);
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Outcome of one planning call.
pub struct Plan {
    /// full best action sequence (length horizon - 1)
    pub actions: Vec<Vec<f64>>,
    /// its evaluated latent cost
    pub cost: f64,
}

/// Sample `n_candidates` random action sequences and return the cheapest.
///
/// Candidate i draws from its own stream seeded by (plan_seed, i), so a run
/// with a larger K evaluates a superset of the smaller run's candidates.
/// Ties break toward the lowest candidate index.
pub fn plan_sequence(
    dynamics: &dyn LatentDynamics,
    z: &[f64],
    z_goal: &[f64],
    cfg: &MpcConfig,
    space: &ActionSpace,
    plan_seed: u64,
) -> Result<Plan> {
    let k = cfg.n_candidates;
    let steps = cfg.horizon - 1;
    let n_a = space.dim();

    let mut sequences: Vec<Vec<Vec<f64>>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(plan_seed, i as u64));
        sequences.push((0..steps).map(|_| space.sample(&mut rng)).collect());
    }

    // batched rollout of all candidates in lockstep
    let n_z = z.len();
    let mut zs = Tensor::new(vec![k, n_z], z.iter().cycle().take(k * n_z).copied().collect())?;
    let mut costs = vec![0.0_f64; k];
    let mut err = vec![0.0; n_z];
    for t in 0..steps {
        let mut acts = Vec::with_capacity(k * n_a);
        for seq in &sequences {
            acts.extend_from_slice(&seq[t]);
        }
        let a_t = Tensor::new(vec![k, n_a], acts)?;
        for (i, cost) in costs.iter_mut().enumerate() {
            let zrow = &zs.data()[i * n_z..(i + 1) * n_z];
            for (e, (&g, &zi)) in err.iter_mut().zip(z_goal.iter().zip(zrow)) {
                *e = g - zi;
            }
            *cost += quad_form(&cfg.q, &err) + quad_form(&cfg.r, &sequences[i][t]);
        }
        zs = dynamics.step_batch(&zs, &a_t)?;
    }

    let mut best = 0;
    for i in 1..k {
        if costs[i] < costs[best] {
            best = i;
        }
    }
    Ok(Plan { actions: sequences.swap_remove(best), cost: costs[best] })
}

/// First action of the cheapest sampled sequence.
pub fn plan_action(
    dynamics: &dyn LatentDynamics,
    z: &[f64],
    z_goal: &[f64],
    cfg: &MpcConfig,
    space: &ActionSpace,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>> {
    use rand::RngCore;
    let plan = plan_sequence(dynamics, z, z_goal, cfg, space, rng.next_u64())?;
    Ok(plan.actions.into_iter().next().expect("horizon >= 2"))
}
