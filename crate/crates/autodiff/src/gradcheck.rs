//! Finite-difference verification of reverse-mode gradients.
//!
//! Used by the test suites to compare every differentiable operation against
//! central differences at randomly drawn points.

use crate::error::Result;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

/// Outcome of one gradient comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// max over inputs/elements of |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_err: f64,
}

/// Compare reverse-mode gradients of a scalar-valued tape program against
/// central finite differences with the given step.
///
/// `build` receives a fresh tape plus leaves for `inputs` (all tracking
/// gradients) and must return a scalar output variable.
pub fn gradcheck<F>(build: F, inputs: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<VarId> =
            points.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
        let out = build(&mut tape, &ids)?;
        tape.value(out).item()
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let out = build(&mut tape, &ids)?;
    let grads = tape.backward(out)?;

    let mut max_rel_err = 0.0_f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[k], input.shape());
        for e in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += step;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= step;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
            let a = analytic.data()[e];
            let denom = 1.0_f64.max(a.abs()).max(numeric.abs());
            max_rel_err = max_rel_err.max((a - numeric).abs() / denom);
        }
    }
    Ok(GradCheckReport { max_rel_err })
}
