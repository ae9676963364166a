//! The beta sweep: train q models per beta, evaluate closed-loop control and
//! Gramian diagnostics, aggregate medians and means.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{anyhow, Result};
use cgram_autodiff::Tensor;
use cgram_ctrb::{controllability_matrix, gramian, min_eig_spd};
use cgram_envs::dataset::RawRecord;
use cgram_envs::make_env;
use cgram_model::{Batch, Model};
use cgram_mpc::{closed_loop_control, derive_seed, NeuralEncoder};

use crate::config::ExperimentConfig;
use crate::train::{prepare_records, train_model, TrainOutcome, STREAM_DATA, STREAM_MPC};

/// Job seed for (beta index, model index) under a master seed.
pub fn job_seed(master: u64, beta_index: usize, model_index: usize) -> u64 {
    derive_seed(derive_seed(master, 0x6265_7461 ^ beta_index as u64), model_index as u64)
}

/// One sweep result row.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub beta: f64,
    pub beta_index: usize,
    pub model_index: usize,
    pub seed: u64,
    pub final_recon: f64,
    pub final_kl: f64,
    pub constraint: f64,
    pub ln_lambda_min: f64,
    pub original_cost: f64,
    pub truncated: bool,
    pub failed: bool,
    pub wall_clock_s: f64,
}

/// Per-beta aggregate.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub beta: f64,
    pub median_cost: f64,
    pub mean_cost: f64,
    pub pct_change_median: f64,
    pub pct_change_mean: f64,
    pub median_ln_lambda_min: f64,
    pub n_ok: usize,
}

pub struct SweepArtifacts {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
    /// trained models keyed by (beta_index, model_index); filled when
    /// requested
    pub models: Vec<((usize, usize), Model)>,
}

/// Evaluate one trained model: Gramian diagnostics on held-out latents plus
/// one closed-loop episode.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &Model,
    holdout: &[RawRecord],
    outcome: &TrainOutcome,
    seed: u64,
    beta: f64,
    beta_index: usize,
    model_index: usize,
) -> Result<SweepRow> {
    let ln_lambda_min = mean_ln_lambda_min(model, holdout)?;

    let env = make_env(cfg.env);
    let encoder = NeuralEncoder { model, env: env.as_ref() };
    let eval = model.transition_eval().map_err(|e| anyhow!("transition eval: {e}"))?;
    let report = closed_loop_control(
        env.as_ref(),
        &encoder,
        &eval,
        &env.eval_initial(),
        &env.goal_state(),
        &cfg.mpc_config(),
        derive_seed(seed, STREAM_MPC),
    )
    .map_err(|e| anyhow!("closed-loop evaluation: {e}"))?;

    let last = outcome.log.last();
    Ok(SweepRow {
        beta,
        beta_index,
        model_index,
        seed,
        final_recon: last.map_or(f64::NAN, |l| l.reconstruction),
        final_kl: last.map_or(f64::NAN, |l| l.kl),
        constraint: last.map_or(f64::NAN, |l| l.constraint),
        ln_lambda_min,
        original_cost: report.original_cost,
        truncated: report.truncated,
        failed: outcome.aborted,
        wall_clock_s: 0.0,
    })
}

/// Mean ln of the minimum Gramian eigenvalue over held-out latent means.
/// Eigenvalues are floored at the smallest positive double so the log of an
/// exactly singular Gramian stays finite.
pub fn mean_ln_lambda_min(model: &Model, holdout: &[RawRecord]) -> Result<f64> {
    if holdout.is_empty() {
        return Err(anyhow!("empty held-out batch"));
    }
    let (h, w) = (model.config.frame_h, model.config.frame_w);
    let n_z = model.config.n_z;
    let indices: Vec<usize> = (0..holdout.len()).collect();
    let batch = Batch::from_records(holdout, &indices, (h, w), model.config.n_a)
        .map_err(|e| anyhow!("holdout batch: {e}"))?;
    let (means, _) = model.encode_eval(&batch.o_t).map_err(|e| anyhow!("encode: {e}"))?;
    let eval = model.transition_eval().map_err(|e| anyhow!("transition eval: {e}"))?;
    let mut acc = 0.0;
    for i in 0..holdout.len() {
        let lin = eval
            .linearize(&means.data()[i * n_z..(i + 1) * n_z])
            .map_err(|e| anyhow!("linearize: {e}"))?;
        let c = controllability_matrix(&lin.a, &lin.b).map_err(|e| anyhow!("ctrb: {e}"))?;
        let w_mat = gramian(&c).map_err(|e| anyhow!("gramian: {e}"))?;
        let lambda = min_eig_spd(&symmetrize(&w_mat)).map_err(|e| anyhow!("min eig: {e}"))?;
        acc += lambda.max(f64::MIN_POSITIVE).ln();
    }
    Ok(acc / holdout.len() as f64)
}

fn symmetrize(w: &Tensor) -> Tensor {
    let n = w.shape()[0];
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = 0.5 * (w.at2(i, j) + w.at2(j, i));
        }
    }
    Tensor::new(vec![n, n], data).expect("finite")
}

/// Run one sweep job end to end: collect data, train, evaluate.
pub fn run_job(
    cfg: &ExperimentConfig,
    beta_index: usize,
    model_index: usize,
) -> Result<(SweepRow, Model)> {
    let start = Instant::now();
    let beta = cfg.beta_list[beta_index];
    let seed = job_seed(cfg.seed, beta_index, model_index);
    let records = prepare_records(cfg, derive_seed(seed, STREAM_DATA))?;
    let holdout_len = cfg.holdout.min(records.len() / 4);
    let (train_set, holdout) = records.split_at(records.len() - holdout_len);
    let (model, outcome) = train_model(cfg, train_set, beta, seed, false)?;
    let mut row = evaluate_model(cfg, &model, holdout, &outcome, seed, beta, beta_index, model_index)?;
    row.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((row, model))
}

/// Run every (beta, model) job, up to `jobs` in parallel. Each job owns its
/// RNG streams and dataset; rows are merged in (beta, model) order after all
/// jobs finish, so the execution order never shows in the results.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    jobs: usize,
    job_order: Option<Vec<(usize, usize)>>,
    keep_models: bool,
) -> Result<SweepArtifacts> {
    let mut order = job_order.unwrap_or_else(|| {
        let mut v = Vec::new();
        for b in 0..cfg.beta_list.len() {
            for m in 0..cfg.q_models {
                v.push((b, m));
            }
        }
        v
    });
    order.dedup();
    let threads = jobs.max(1).min(order.len());

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(SweepRow, Option<Model>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= order.len() {
                    break;
                }
                let (beta_index, model_index) = order[idx];
                let entry = match run_job(cfg, beta_index, model_index) {
                    Ok((row, model)) => {
                        if row.failed {
                            eprintln!(
                                "sweep job (beta {}, model {model_index}) flagged: training aborted",
                                row.beta
                            );
                        }
                        (row, keep_models.then_some(model))
                    }
                    Err(e) => {
                        eprintln!(
                            "sweep job (beta index {beta_index}, model {model_index}) failed: {e}"
                        );
                        (
                            SweepRow {
                                beta: cfg.beta_list[beta_index],
                                beta_index,
                                model_index,
                                seed: job_seed(cfg.seed, beta_index, model_index),
                                final_recon: f64::NAN,
                                final_kl: f64::NAN,
                                constraint: f64::NAN,
                                ln_lambda_min: f64::NAN,
                                original_cost: f64::NAN,
                                truncated: false,
                                failed: true,
                                wall_clock_s: 0.0,
                            },
                            None,
                        )
                    }
                };
                results.lock().expect("sweep mutex poisoned").push(entry);
            });
        }
    });

    let mut collected = results.into_inner().expect("sweep mutex poisoned");
    collected.sort_by_key(|(row, _)| (row.beta_index, row.model_index));
    let mut rows = Vec::with_capacity(collected.len());
    let mut models = Vec::new();
    for (row, model) in collected {
        if let Some(m) = model {
            models.push(((row.beta_index, row.model_index), m));
        }
        rows.push(row);
    }
    let summary = summarize(cfg, &rows);
    Ok(SweepArtifacts { rows, summary, models })
}

pub fn median(values: &mut Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-beta medians and means plus percentage change against the beta = 0
/// baseline (computed on both aggregates; the means match the paper's
/// averaging protocol).
pub fn summarize(cfg: &ExperimentConfig, rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut summary = Vec::new();
    let mut baseline_median = f64::NAN;
    let mut baseline_mean = f64::NAN;
    for (beta_index, &beta) in cfg.beta_list.iter().enumerate() {
        let ok: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| r.beta_index == beta_index && !r.failed && r.original_cost.is_finite())
            .collect();
        let mut costs: Vec<f64> = ok.iter().map(|r| r.original_cost).collect();
        let mut lambdas: Vec<f64> = ok.iter().map(|r| r.ln_lambda_min).collect();
        let mean_cost = if costs.is_empty() {
            f64::NAN
        } else {
            costs.iter().sum::<f64>() / costs.len() as f64
        };
        let median_cost = median(&mut costs);
        let median_lambda = median(&mut lambdas);
        if beta == 0.0 {
            baseline_median = median_cost;
            baseline_mean = mean_cost;
        }
        summary.push(SummaryRow {
            beta,
            median_cost,
            mean_cost,
            pct_change_median: f64::NAN,
            pct_change_mean: f64::NAN,
            median_ln_lambda_min: median_lambda,
            n_ok: ok.len(),
        });
    }
    for row in &mut summary {
        row.pct_change_median = 100.0 * (row.median_cost - baseline_median) / baseline_median;
        row.pct_change_mean = 100.0 * (row.mean_cost - baseline_mean) / baseline_mean;
    }
    summary
}
