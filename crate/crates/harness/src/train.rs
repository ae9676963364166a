//! Stage-one training: Adam over the controllability-enhanced objective.

use anyhow::{anyhow, bail, Result};
use cgram_autodiff::{adam_step, AdamConfig, AdamState, Tape};
use cgram_envs::dataset::{to_raw, RawRecord};
use cgram_envs::{collect_dataset, make_env};
use cgram_model::checkpoint::quantize_params_to_f32;
use cgram_model::{sample_standard_normal, total_objective, Batch, Model};
use cgram_mpc::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::config::ExperimentConfig;

/// Seed streams split off a job seed.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_NOISE: u64 = 3;
pub const STREAM_DATA: u64 = 4;
pub const STREAM_MPC: u64 = 5;
pub const STREAM_FINAL_EVAL: u64 = 6;

/// Per-epoch mean loss terms.
#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: usize,
    pub reconstruction: f64,
    pub kl: f64,
    pub constraint: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// loss of the checkpointed (f32-rounded) parameters on the fixed batch
    pub final_loss: f64,
    /// training stopped early because the loss went non-finite; the model
    /// holds the last good epoch's parameters
    pub aborted: bool,
    pub abort_reason: Option<String>,
}

/// Collect and quantize a training set exactly as the on-disk pipeline does.
pub fn prepare_records(cfg: &ExperimentConfig, data_seed: u64) -> Result<Vec<RawRecord>> {
    let env = make_env(cfg.env);
    let records = collect_dataset(env.as_ref(), cfg.n_samples, data_seed, cfg.collect_episode_steps)
        .map_err(|e| anyhow!("data collection failed: {e}"))?;
    Ok(records.iter().map(to_raw).collect())
}

/// Train one model on the given records. Deterministic in `job_seed`.
///
/// When `verify_beta0_pairing` is set and beta is 0, the first batch is also
/// evaluated with the constraint explicitly on the tape at weight 0 and the
/// two gradient sets are asserted bit-identical, witnessing that the
/// reported constraint never enters the gradient.
pub fn train_model(
    cfg: &ExperimentConfig,
    records: &[RawRecord],
    beta: f64,
    job_seed: u64,
    verify_beta0_pairing: bool,
) -> Result<(Model, TrainOutcome)> {
    if records.is_empty() {
        bail!("no training records");
    }
    let model_cfg = cfg.model_config(beta);
    let (h, w) = (model_cfg.frame_h, model_cfg.frame_w);
    let (n_z, n_a) = (model_cfg.n_z, model_cfg.n_a);
    let mut model = Model::new(model_cfg, derive_seed(job_seed, STREAM_INIT))
        .map_err(|e| anyhow!("model init failed: {e}"))?;
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(derive_seed(job_seed, STREAM_SHUFFLE));
    let mut noise_rng = ChaCha12Rng::seed_from_u64(derive_seed(job_seed, STREAM_NOISE));

    let mut outcome = TrainOutcome {
        log: Vec::with_capacity(cfg.epochs),
        final_loss: f64::NAN,
        aborted: false,
        abort_reason: None,
    };

    let mut indices: Vec<usize> = (0..records.len()).collect();
    let mut first_batch = true;
    'training: for epoch in 0..cfg.epochs {
        let snapshot = model.params.clone();
        indices.shuffle(&mut shuffle_rng);
        let mut sums = [0.0_f64; 4];
        let mut batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let batch = Batch::from_records(records, chunk, (h, w), n_a)
                .map_err(|e| anyhow!("batch assembly failed: {e}"))?;
            let noise = sample_standard_normal(&mut noise_rng, &[chunk.len(), n_z]);

            let mut tape = Tape::new();
            let eval = match total_objective(&model, &mut tape, &batch, beta, &noise) {
                Ok(eval) if eval.diagnostics.total.is_finite() => eval,
                Ok(eval) => {
                    model.params = snapshot;
                    outcome.aborted = true;
                    outcome.abort_reason =
                        Some(format!("non-finite loss {} at epoch {epoch}", eval.diagnostics.total));
                    break 'training;
                }
                Err(e) => {
                    model.params = snapshot;
                    outcome.aborted = true;
                    outcome.abort_reason = Some(format!("objective failed at epoch {epoch}: {e}"));
                    break 'training;
                }
            };
            let grads = tape
                .backward(eval.loss)
                .map_err(|e| anyhow!("backward failed: {e}"))?;
            let by_name = eval.reg.collect(&grads, &model.params);

            if first_batch && verify_beta0_pairing && beta == 0.0 {
                verify_beta0_gradient_pairing(&model, &batch, &noise, &by_name)?;
            }
            first_batch = false;
            drop(tape);

            if let Err(e) = adam_step(&mut model.params, &by_name, &mut adam) {
                model.params = snapshot;
                outcome.aborted = true;
                outcome.abort_reason = Some(format!("optimizer failed at epoch {epoch}: {e}"));
                break 'training;
            }
            let d = eval.diagnostics;
            sums[0] += d.reconstruction;
            sums[1] += d.kl;
            sums[2] += d.constraint;
            sums[3] += d.total;
            batches += 1;
        }
        if batches > 0 {
            outcome.log.push(EpochLog {
                epoch,
                reconstruction: sums[0] / batches as f64,
                kl: sums[1] / batches as f64,
                constraint: sums[2] / batches as f64,
                total: sums[3] / batches as f64,
            });
        }
    }

    // The logged final loss is defined on the checkpointed parameters:
    // round through f32 first so a reload reproduces it exactly.
    quantize_params_to_f32(&mut model);
    outcome.final_loss = fixed_batch_loss(cfg, &model, records, beta, job_seed)?;
    Ok((model, outcome))
}

/// Loss of the model on the deterministic fixed batch used for logging and
/// checkpoint verification.
pub fn fixed_batch_loss(
    cfg: &ExperimentConfig,
    model: &Model,
    records: &[RawRecord],
    beta: f64,
    job_seed: u64,
) -> Result<f64> {
    let take = records.len().min(cfg.batch_size);
    let indices: Vec<usize> = (0..take).collect();
    let batch = Batch::from_records(
        records,
        &indices,
        (model.config.frame_h, model.config.frame_w),
        model.config.n_a,
    )
    .map_err(|e| anyhow!("fixed batch assembly failed: {e}"))?;
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(job_seed, STREAM_FINAL_EVAL));
    let noise = sample_standard_normal(&mut rng, &[take, model.config.n_z]);
    let mut tape = Tape::new();
    let eval = total_objective(model, &mut tape, &batch, beta, &noise)
        .map_err(|e| anyhow!("fixed batch evaluation failed: {e}"))?;
    Ok(eval.diagnostics.total)
}

/// Assert that the beta = 0 gradients are unchanged when the constraint is
/// explicitly recorded on the tape at weight zero: the reported l_omega
/// never enters the gradient.
fn verify_beta0_gradient_pairing(
    model: &Model,
    batch: &Batch,
    noise: &cgram_autodiff::Tensor,
    reference: &std::collections::BTreeMap<String, cgram_autodiff::Tensor>,
) -> Result<()> {
    let mut tape = Tape::new();
    let eval = cgram_model::total_objective_with(model, &mut tape, batch, 0.0, noise, true)
        .map_err(|e| anyhow!("pairing evaluation failed: {e}"))?;
    let grads = tape.backward(eval.loss).map_err(|e| anyhow!("pairing backward failed: {e}"))?;
    let paired = eval.reg.collect(&grads, &model.params);
    for (name, tensor) in reference {
        let other = &paired[name];
        for (a, b) in tensor.data().iter().zip(other.data()) {
            // values must match exactly; +0/-0 count as equal
            if a.to_bits() != b.to_bits() && !(*a == 0.0 && *b == 0.0) {
                bail!("beta=0 pairing check failed for parameter {name}");
            }
        }
    }
    Ok(())
}
