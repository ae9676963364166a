//! Flat key=value experiment configuration.
//!
//! Lines are `key = value` with `#` comments. Unknown keys are errors so
//! typos surface immediately. Missing keys fall back to per-environment
//! defaults.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cgram_autodiff::Tensor;
use cgram_envs::EnvId;
use cgram_model::{config_for, ModelConfig};
use cgram_mpc::MpcConfig;

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub n_samples: usize,
    pub collect_episode_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub kl_weight: f64,
    pub jitter: f64,
    /// beta used by single-model training (`--beta` overrides)
    pub beta: f64,
    /// beta grid for the sweep; must contain the 0 baseline
    pub beta_list: Vec<f64>,
    /// models trained per beta value
    pub q_models: usize,
    pub seed: u64,
    pub mpc_horizon: usize,
    pub n_candidates: usize,
    pub episode_length: usize,
    pub control_horizon: usize,
    pub q_cost: f64,
    pub r_cost: f64,
    pub goal_tolerance: f64,
    pub re_encode: bool,
    /// records held out of training for the Gramian diagnostics
    pub holdout: usize,
}

impl ExperimentConfig {
    pub fn defaults(env: EnvId) -> Self {
        let (learning_rate, episode_length, n_candidates, epochs, r_cost) = match env {
            EnvId::Pendulum => (3e-4, 50, 1000, 60, 0.01),
            EnvId::CartPole => (1e-4, 100, 500, 100, 1.0),
        };
        ExperimentConfig {
            env,
            n_samples: 15000,
            collect_episode_steps: 32,
            epochs,
            batch_size: 128,
            learning_rate,
            kl_weight: 0.1,
            jitter: 1e-6,
            beta: 0.0,
            beta_list: vec![0.0, 0.1, 0.5, 1.0, 5.0],
            q_models: match env {
                EnvId::Pendulum => 20,
                EnvId::CartPole => 8,
            },
            seed: 42,
            mpc_horizon: 10,
            n_candidates,
            episode_length,
            control_horizon: 1,
            q_cost: 1.0,
            r_cost,
            goal_tolerance: 0.0,
            re_encode: false,
            holdout: 256,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key = value, got '{raw}'", lineno + 1);
            };
            let key = key.trim().to_string();
            if pairs.insert(key.clone(), value.trim().to_string()).is_some() {
                bail!("config line {}: duplicate key '{key}'", lineno + 1);
            }
        }

        let env = match pairs.get("env").map(String::as_str) {
            Some("pendulum") | None => EnvId::Pendulum,
            Some("cartpole") => EnvId::CartPole,
            Some(other) => bail!("unknown env '{other}' (expected pendulum or cartpole)"),
        };
        let mut cfg = Self::defaults(env);

        for (key, value) in &pairs {
            match key.as_str() {
                "env" => {}
                "n_samples" => cfg.n_samples = parse_num(key, value)?,
                "collect_episode_steps" => cfg.collect_episode_steps = parse_num(key, value)?,
                "epochs" => cfg.epochs = parse_num(key, value)?,
                "batch_size" => cfg.batch_size = parse_num(key, value)?,
                "learning_rate" => cfg.learning_rate = parse_num(key, value)?,
                "kl_weight" => cfg.kl_weight = parse_num(key, value)?,
                "jitter" => cfg.jitter = parse_num(key, value)?,
                "beta" => cfg.beta = parse_num(key, value)?,
                "beta_list" => {
                    cfg.beta_list = value
                        .split(',')
                        .map(|v| parse_num::<f64>("beta_list", v.trim()))
                        .collect::<Result<_>>()?;
                }
                "q_models" => cfg.q_models = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "mpc_horizon" => cfg.mpc_horizon = parse_num(key, value)?,
                "n_candidates" => cfg.n_candidates = parse_num(key, value)?,
                "episode_length" => cfg.episode_length = parse_num(key, value)?,
                "control_horizon" => cfg.control_horizon = parse_num(key, value)?,
                "q_cost" => cfg.q_cost = parse_num(key, value)?,
                "r_cost" => cfg.r_cost = parse_num(key, value)?,
                "goal_tolerance" => cfg.goal_tolerance = parse_num(key, value)?,
                "re_encode" => {
                    cfg.re_encode = match value.as_str() {
                        "true" | "1" => true,
                        "false" | "0" => false,
                        other => bail!("re_encode must be true/false, got '{other}'"),
                    }
                }
                "holdout" => cfg.holdout = parse_num(key, value)?,
                other => bail!("unknown config key '{other}'"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_models < 1 {
            bail!("q_models must be >= 1");
        }
        if self.beta < 0.0 || self.beta_list.iter().any(|&b| b < 0.0) {
            bail!("beta values must be >= 0");
        }
        if !self.beta_list.contains(&0.0) {
            bail!("beta_list must include the 0 baseline");
        }
        if self.n_samples == 0 || self.batch_size == 0 || self.epochs == 0 {
            bail!("n_samples, batch_size and epochs must be positive");
        }
        if self.collect_episode_steps < 2 {
            bail!("collect_episode_steps must be >= 2");
        }
        Ok(())
    }

    /// Model configuration with this experiment's objective weights.
    pub fn model_config(&self, beta: f64) -> ModelConfig {
        let mut mc = config_for(self.env);
        mc.beta = beta;
        mc.kl_weight = self.kl_weight;
        mc.jitter = self.jitter;
        mc
    }

    pub fn mpc_config(&self) -> MpcConfig {
        let mc = config_for(self.env);
        let (n_z, n_a) = (mc.n_z, mc.n_a);
        let mut q = Tensor::zeros(&[n_z, n_z]);
        for i in 0..n_z {
            q.data_mut()[i * n_z + i] = self.q_cost;
        }
        let mut r = Tensor::zeros(&[n_a, n_a]);
        for i in 0..n_a {
            r.data_mut()[i * n_a + i] = self.r_cost;
        }
        MpcConfig {
            horizon: self.mpc_horizon,
            n_candidates: self.n_candidates,
            q,
            r,
            episode_length: self.episode_length,
            control_horizon: self.control_horizon,
            goal_tolerance: self.goal_tolerance,
            re_encode: self.re_encode,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| anyhow::anyhow!("config key '{key}': cannot parse '{value}': {e}"))
}
