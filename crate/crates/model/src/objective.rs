//! The full training objective: prediction loss plus KL, minus beta times
//! the mean log-det controllability Gramian.

use cgram_autodiff::{AdError, Result, Tape, Tensor, VarId};
use cgram_ctrb::constraint_logdet;
use cgram_envs::dataset::RawRecord;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::losses::{kl_loss, reconstruction_loss};
use crate::net::Model;

/// One training batch as dense tensors.
pub struct Batch {
    pub o_t: Tensor,
    pub actions: Tensor,
    pub o_next: Tensor,
    pub size: usize,
}

impl Batch {
    /// Assemble a batch from quantized records at the given indices.
    pub fn from_records(
        records: &[RawRecord],
        indices: &[usize],
        frame_hw: (usize, usize),
        n_a: usize,
    ) -> Result<Batch> {
        if indices.is_empty() {
            return Err(AdError::Usage("empty batch".into()));
        }
        let (h, w) = frame_hw;
        let pix = 2 * h * w;
        let mut o_t = Vec::with_capacity(indices.len() * pix);
        let mut o_next = Vec::with_capacity(indices.len() * pix);
        let mut actions = Vec::with_capacity(indices.len() * n_a);
        for &i in indices {
            let r = &records[i];
            o_t.extend(r.o_t.iter().map(|&b| b as f64 / 255.0));
            o_next.extend(r.o_next.iter().map(|&b| b as f64 / 255.0));
            actions.extend(r.action.iter().map(|&a| a as f64));
        }
        Ok(Batch {
            o_t: Tensor::new(vec![indices.len(), 2, h, w], o_t)?,
            o_next: Tensor::new(vec![indices.len(), 2, h, w], o_next)?,
            actions: Tensor::new(vec![indices.len(), n_a], actions)?,
            size: indices.len(),
        })
    }
}

/// Per-term values of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Diagnostics {
    pub reconstruction: f64,
    pub kl: f64,
    /// mean ln det W over the batch (reported even when beta = 0)
    pub constraint: f64,
    pub total: f64,
}

/// Loss variable plus the parameter registration that produced it, so the
/// caller can pull named gradients after `backward`.
pub struct ObjectiveEval {
    pub loss: VarId,
    pub reg: cgram_autodiff::TapeParams,
    pub diagnostics: Diagnostics,
}

/// Build the training objective on the tape.
///
/// The prediction path decodes transition(reparameterize(encode(o_t)), a_t)
/// against o_{t+1}; the constraint is evaluated at the encoder mean. With
/// beta = 0 the constraint never touches the tape: it is recomputed through
/// the untraced evaluator purely for the diagnostics.
pub fn total_objective(
    model: &Model,
    tape: &mut Tape,
    batch: &Batch,
    beta: f64,
    noise: &Tensor,
) -> Result<ObjectiveEval> {
    total_objective_with(model, tape, batch, beta, noise, beta > 0.0)
}

/// Like [`total_objective`] but with explicit control over whether the
/// constraint is recorded on the tape. Forcing the trace at beta = 0 exists
/// so tests can witness that the reported constraint contributes nothing to
/// the gradients.
pub fn total_objective_with(
    model: &Model,
    tape: &mut Tape,
    batch: &Batch,
    beta: f64,
    noise: &Tensor,
    trace_constraint: bool,
) -> Result<ObjectiveEval> {
    if beta < 0.0 {
        return Err(AdError::Usage(format!("beta must be >= 0, got {beta}")));
    }
    let reg = model.params.register(tape);
    let x = tape.constant(batch.o_t.clone());
    let target = tape.constant(batch.o_next.clone());
    let actions = tape.constant(batch.actions.clone());
    let noise_var = tape.constant(noise.clone());

    let gaussian = model.encode_traced(tape, &reg, x)?;
    let z_sample = Model::reparameterize(tape, &gaussian, noise_var)?;
    let (z_next, _) = model.transition_traced(tape, &reg, z_sample, actions)?;
    let pred = model.decode_traced(tape, &reg, z_next)?;

    let recon = reconstruction_loss(tape, target, pred)?;
    let kl = kl_loss(tape, &gaussian)?;
    let weighted_kl = tape.scale(kl, model.config.kl_weight)?;
    let prediction_term = tape.add(recon, weighted_kl)?;

    let (loss, constraint_value) = if trace_constraint {
        let (_, lins) = model.transition_traced(tape, &reg, gaussian.mean, actions)?;
        let pairs: Vec<(VarId, VarId)> = lins.iter().map(|l| (l.a, l.b)).collect();
        let lw = constraint_logdet(tape, &pairs, model.config.jitter)?;
        let weighted = tape.scale(lw, beta)?;
        let loss = tape.sub(prediction_term, weighted)?;
        (loss, tape.value(lw).item()?)
    } else {
        let value = constraint_value_eval(model, tape.value(gaussian.mean))?;
        (prediction_term, value)
    };

    let diagnostics = Diagnostics {
        reconstruction: tape.value(recon).item()?,
        kl: tape.value(kl).item()?,
        constraint: constraint_value,
        total: tape.value(loss).item()?,
    };
    Ok(ObjectiveEval { loss, reg, diagnostics })
}

/// Mean ln det W over a batch of latent means, outside any gradient path.
/// The linearizations depend on z only, so no actions are needed.
pub fn constraint_value_eval(model: &Model, means: &Tensor) -> Result<f64> {
    let eval = model.transition_eval()?;
    let batch = means.shape()[0];
    let n_z = model.config.n_z;
    let mut tape = Tape::new();
    let mut pairs = Vec::with_capacity(batch);
    for i in 0..batch {
        let lin = eval.linearize(&means.data()[i * n_z..(i + 1) * n_z])?;
        let a = tape.constant(lin.a);
        let b = tape.constant(lin.b);
        pairs.push((a, b));
    }
    let lw = constraint_logdet(&mut tape, &pairs, model.config.jitter)?;
    tape.value(lw).item()
}

/// Standard-normal noise via Box-Muller, deterministic under the RNG.
pub fn sample_standard_normal(rng: &mut ChaCha12Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n + 1);
    while data.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        data.push(r * c);
        data.push(r * s);
    }
    data.truncate(n);
    Tensor::new(shape.to_vec(), data).expect("finite noise")
}
