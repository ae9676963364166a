//! Side-by-side open-loop prediction: ground truth vs constrained vs
//! baseline model, emitted as PNG frames and a per-step MSE table.

use std::path::Path;

use anyhow::{anyhow, bail, Result};
use cgram_envs::{make_env, Frame, ObservationPair};
use cgram_model::Model;
use cgram_mpc::{open_loop_rollout, pair_mse};

use crate::csvio::{fmt_f64, write_rows};

pub struct RolloutComparison {
    /// per-step MSE of the constrained model against ground truth
    pub constrained_mse: Vec<f64>,
    /// per-step MSE of the baseline model against ground truth
    pub baseline_mse: Vec<f64>,
}

impl RolloutComparison {
    pub fn cumulative_constrained(&self) -> f64 {
        self.constrained_mse.iter().sum()
    }

    pub fn cumulative_baseline(&self) -> f64 {
        self.baseline_mse.iter().sum()
    }
}

/// Roll the true simulator and both models forward `n_steps` under zero
/// actions from `x0`, returning per-step pixel MSE for each model.
pub fn compare_rollouts(
    baseline: &Model,
    constrained: &Model,
    x0: &[f64],
    n_steps: usize,
) -> Result<(RolloutComparison, Vec<ObservationPair>, Vec<ObservationPair>, Vec<ObservationPair>)> {
    if baseline.config.env != constrained.config.env {
        bail!(
            "checkpoints target different environments: {} vs {}",
            baseline.config.env.name(),
            constrained.config.env.name()
        );
    }
    let env = make_env(baseline.config.env);
    let n_a = env.action_space().dim();
    let zero_actions: Vec<Vec<f64>> = vec![vec![0.0; n_a]; n_steps];

    // ground-truth trajectory under zero actions
    let mut states = vec![x0.to_vec()];
    for _ in 0..n_steps {
        let next = env
            .step(states.last().unwrap(), &vec![0.0; n_a])
            .map_err(|e| anyhow!("simulator step failed: {e}"))?;
        states.push(next);
    }
    let frames: Vec<Frame> = states.iter().map(|s| env.render(s)).collect();
    let truth: Vec<ObservationPair> = (0..=n_steps)
        .map(|t| {
            let prev = if t == 0 { frames[0].clone() } else { frames[t - 1].clone() };
            ObservationPair::new(prev, frames[t].clone())
        })
        .collect();

    let o0 = truth[0].clone();
    let constrained_pred = open_loop_rollout(constrained, &o0, &zero_actions)
        .map_err(|e| anyhow!("constrained rollout failed: {e}"))?;
    let baseline_pred = open_loop_rollout(baseline, &o0, &zero_actions)
        .map_err(|e| anyhow!("baseline rollout failed: {e}"))?;

    let comparison = RolloutComparison {
        constrained_mse: truth
            .iter()
            .zip(&constrained_pred)
            .map(|(t, p)| pair_mse(p, t))
            .collect(),
        baseline_mse: truth.iter().zip(&baseline_pred).map(|(t, p)| pair_mse(p, t)).collect(),
    };
    Ok((comparison, truth, constrained_pred, baseline_pred))
}

/// Write the three-column frame grid (`t{k}_{source}.png`) and the MSE CSV.
pub fn emit_rollout_artifacts(
    out_dir: &Path,
    truth: &[ObservationPair],
    constrained: &[ObservationPair],
    baseline: &[ObservationPair],
    comparison: &RolloutComparison,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    for (t, ((tr, co), ba)) in truth.iter().zip(constrained).zip(baseline).enumerate() {
        write_png(&out_dir.join(format!("t{t}_original.png")), &tr.frame_curr)?;
        write_png(&out_dir.join(format!("t{t}_constrained.png")), &co.frame_curr)?;
        write_png(&out_dir.join(format!("t{t}_baseline.png")), &ba.frame_curr)?;
    }
    let mut rows = Vec::new();
    for (t, mse) in comparison.constrained_mse.iter().enumerate() {
        rows.push(vec![t.to_string(), "constrained".to_string(), fmt_f64(*mse)]);
    }
    for (t, mse) in comparison.baseline_mse.iter().enumerate() {
        rows.push(vec![t.to_string(), "baseline".to_string(), fmt_f64(*mse)]);
    }
    write_rows(&out_dir.join("mse.csv"), &["step", "model", "mse"], &rows)?;
    Ok(())
}

/// 8-bit grayscale PNG.
pub fn write_png(path: &Path, frame: &Frame) -> Result<()> {
    let mut img = image::GrayImage::new(frame.width as u32, frame.height as u32);
    for y in 0..frame.height {
        for x in 0..frame.width {
            let v = (frame.pixels[y * frame.width + x] * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path).map_err(|e| anyhow!("writing {}: {e}", path.display()))
}
