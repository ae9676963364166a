//! Training loss terms.

use cgram_autodiff::{AdError, Result, Tape, VarId};

use crate::net::LatentGaussianVars;

/// Mean binary cross-entropy over pixels:
/// -mean\[o ln(o_hat) + (1 - o) ln(1 - o_hat)\].
/// The prediction must lie strictly inside (0, 1).
pub fn reconstruction_loss(tape: &mut Tape, target: VarId, pred: VarId) -> Result<VarId> {
    if tape.value(target).shape() != tape.value(pred).shape() {
        return Err(AdError::Dimension {
            op: "reconstruction_loss",
            detail: format!(
                "{:?} vs {:?}",
                tape.value(target).shape(),
                tape.value(pred).shape()
            ),
        });
    }
    if !tape.value(pred).data().iter().all(|&v| v > 0.0 && v < 1.0) {
        return Err(AdError::NonFinite {
            op: "reconstruction_loss",
            detail: "prediction outside the open interval (0, 1)".into(),
        });
    }
    let ln_pred = tape.ln(pred)?;
    let neg_pred = tape.neg(pred)?;
    let one_minus_pred = tape.add_scalar(neg_pred, 1.0)?;
    let ln_one_minus = tape.ln(one_minus_pred)?;
    let neg_target = tape.neg(target)?;
    let one_minus_target = tape.add_scalar(neg_target, 1.0)?;
    let hit = tape.mul(target, ln_pred)?;
    let miss = tape.mul(one_minus_target, ln_one_minus)?;
    let per_pixel = tape.add(hit, miss)?;
    let mean = tape.mean(per_pixel)?;
    tape.scale(mean, -1.0)
}

/// KL divergence of the encoder Gaussian from the standard normal,
/// -1/2 sum(1 + log_var - mean^2 - exp(log_var)), averaged over the batch.
pub fn kl_loss(tape: &mut Tape, gaussian: &LatentGaussianVars) -> Result<VarId> {
    let batch = tape.value(gaussian.mean).shape()[0] as f64;
    let shifted = tape.add_scalar(gaussian.log_var, 1.0)?;
    let mean_sq = tape.mul(gaussian.mean, gaussian.mean)?;
    let partial = tape.sub(shifted, mean_sq)?;
    let var = tape.exp(gaussian.log_var)?;
    let inner = tape.sub(partial, var)?;
    let total = tape.sum(inner)?;
    tape.scale(total, -0.5 / batch)
}

/// Controllability-enhanced objective assembly: prediction - beta * constraint.
pub fn combine_objective(prediction: f64, constraint: f64, beta: f64) -> f64 {
    prediction - beta * constraint
}

#[cfg(test)]
mod tests {
    use super::*;
    use cgram_autodiff::Tensor;

    #[test]
    fn bce_of_half_prediction_is_ln_two() {
        let mut tape = Tape::new();
        let target = tape.leaf(Tensor::full(&[2, 2], 1.0).unwrap());
        let pred = tape.leaf(Tensor::full(&[2, 2], 0.5).unwrap());
        let loss = reconstruction_loss(&mut tape, target, pred).unwrap();
        assert!((tape.value(loss).item().unwrap() - 2.0_f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn bce_fair_coin_entropy() {
        let mut tape = Tape::new();
        let target = tape.leaf(Tensor::full(&[3], 0.5).unwrap());
        let pred = tape.leaf(Tensor::full(&[3], 0.5).unwrap());
        let loss = reconstruction_loss(&mut tape, target, pred).unwrap();
        assert!((tape.value(loss).item().unwrap() - 2.0_f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn bce_matches_scalar_loop_oracle() {
        // random binary targets, predictions clipped to [0.01, 0.99]
        let mut targets = Vec::new();
        let mut preds = Vec::new();
        let mut state = 0x2545f4914f6cdd1du64;
        for _ in 0..64 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let bit = (state >> 63) as f64;
            targets.push(bit);
            preds.push(bit.clamp(0.01, 0.99));
        }
        let mut oracle = 0.0;
        for (o, p) in targets.iter().zip(&preds) {
            oracle += o * p.ln() + (1.0 - o) * (1.0 - p).ln();
        }
        oracle /= -(targets.len() as f64);

        let mut tape = Tape::new();
        let t = tape.leaf(Tensor::from_vec(targets).unwrap());
        let p = tape.leaf(Tensor::from_vec(preds).unwrap());
        let loss = reconstruction_loss(&mut tape, t, p).unwrap();
        assert!((tape.value(loss).item().unwrap() - oracle).abs() <= 1e-10);
    }

    #[test]
    fn bce_rejects_predictions_outside_open_interval() {
        let mut tape = Tape::new();
        let t = tape.leaf(Tensor::full(&[2], 1.0).unwrap());
        let p = tape.leaf(Tensor::new(vec![2], vec![0.5, 1.0]).unwrap());
        assert!(matches!(
            reconstruction_loss(&mut tape, t, p),
            Err(AdError::NonFinite { .. })
        ));
    }

    #[test]
    fn kl_of_standard_normal_is_zero() {
        let mut tape = Tape::new();
        let g = LatentGaussianVars {
            mean: tape.leaf(Tensor::zeros(&[1, 2])),
            log_var: tape.leaf(Tensor::zeros(&[1, 2])),
        };
        let kl = kl_loss(&mut tape, &g).unwrap();
        assert_eq!(tape.value(kl).item().unwrap(), 0.0);
    }

    #[test]
    fn kl_closed_form_unit_mean() {
        let mut tape = Tape::new();
        let g = LatentGaussianVars {
            mean: tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap()),
            log_var: tape.leaf(Tensor::zeros(&[1, 2])),
        };
        let kl = kl_loss(&mut tape, &g).unwrap();
        assert!((tape.value(kl).item().unwrap() - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn kl_nonnegative_over_random_inputs() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for _ in 0..100 {
            let mut tape = Tape::new();
            let mean: Vec<f64> = (0..4).map(|_| next()).collect();
            let log_var: Vec<f64> = (0..4).map(|_| next()).collect();
            let g = LatentGaussianVars {
                mean: tape.leaf(Tensor::new(vec![2, 2], mean).unwrap()),
                log_var: tape.leaf(Tensor::new(vec![2, 2], log_var).unwrap()),
            };
            let kl = kl_loss(&mut tape, &g).unwrap();
            assert!(tape.value(kl).item().unwrap() >= -1e-12);
        }
    }

    #[test]
    fn objective_arithmetic() {
        assert_eq!(combine_objective(1.0, 0.5, 0.5), 0.75);
        assert_eq!(combine_objective(1.0, 0.5, 0.0), 1.0);
    }
}
