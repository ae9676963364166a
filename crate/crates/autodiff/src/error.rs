use std::fmt;

use crate::tensor::Tensor;

/// Errors raised by tensor construction, tape operations and the optimizer.
#[derive(Debug, Clone)]
pub enum AdError {
    /// Operand shapes do not conform for the requested operation.
    Dimension { op: &'static str, detail: String },
    /// An operation produced or received a NaN/Inf value.
    NonFinite { op: &'static str, detail: String },
    /// Cholesky factorization failed even after jitter; carries the offending matrix.
    CholeskyFailed { pivot: usize, matrix: Tensor },
    /// The caller violated an API contract (e.g. backward on a non-scalar).
    Usage(String),
}

impl fmt::Display for AdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdError::Dimension { op, detail } => {
                write!(f, "dimension mismatch in {op}: {detail}")
            }
            AdError::NonFinite { op, detail } => {
                write!(f, "non-finite value in {op}: {detail}")
            }
            AdError::CholeskyFailed { pivot, matrix } => write!(
                f,
                "cholesky factorization failed at pivot {pivot} on {}x{} matrix",
                matrix.shape()[0],
                matrix.shape()[1]
            ),
            AdError::Usage(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for AdError {}

pub type Result<T> = std::result::Result<T, AdError>;
