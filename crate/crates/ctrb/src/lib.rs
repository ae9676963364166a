//! Controllability diagnostics for locally-linear dynamics.
//!
//! For a pair (A, B) the controllability matrix is C = [B, AB, ..., A^{n-1}B]
//! and the Gramian is W = C C^T. The log-determinant of W is the constraint
//! term used during training (differentiable through the tape); the rank of C
//! and the minimum eigenvalue of W are evaluation-only diagnostics.

use cgram_autodiff::{AdError, Result, Tape, Tensor, VarId};

/// Plain-value controllability matrix \[B | AB | ... | A^{n-1}B\].
pub fn controllability_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, m) = check_pair(a, b)?;
    let mut blocks: Vec<Vec<f64>> = vec![b.data().to_vec()];
    for _ in 1..n {
        let prev = blocks.last().unwrap();
        let mut next = vec![0.0; n * m];
        cgram_autodiff::kernels::mm(a.data(), prev, n, n, m, &mut next);
        blocks.push(next);
    }
    let cols = n * m;
    let mut data = vec![0.0; n * cols];
    for (bi, block) in blocks.iter().enumerate() {
        for r in 0..n {
            for c in 0..m {
                data[r * cols + bi * m + c] = block[r * m + c];
            }
        }
    }
    Tensor::new(vec![n, cols], data)
}

/// W = C * C^T.
pub fn gramian(c: &Tensor) -> Result<Tensor> {
    if c.rank() != 2 {
        return Err(AdError::Dimension {
            op: "gramian",
            detail: format!("rank-2 matrix required, got {:?}", c.shape()),
        });
    }
    let (n, k) = (c.shape()[0], c.shape()[1]);
    let mut w = vec![0.0; n * n];
    cgram_autodiff::kernels::mm_nt(c.data(), c.data(), n, k, n, &mut w);
    Tensor::new(vec![n, n], w)
}

/// Numerical rank of the controllability matrix plus the binary test
/// (controllable iff rank == n). Pivots are compared against
/// `tol * largest pivot` under full pivoting.
pub fn rank_test(a: &Tensor, b: &Tensor, tol: f64) -> Result<(bool, usize)> {
    if tol <= 0.0 {
        return Err(AdError::Usage("rank_test requires tol > 0".into()));
    }
    let (n, _) = check_pair(a, b)?;
    let c = controllability_matrix(a, b)?;
    let rank = numerical_rank(&c, tol);
    Ok((rank == n, rank))
}

/// Rank by Gaussian elimination with full pivoting; pivots below
/// `tol * first pivot` do not count.
pub fn numerical_rank(m: &Tensor, tol: f64) -> usize {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut a = m.data().to_vec();
    let steps = rows.min(cols);
    let mut rank = 0;
    let mut largest_pivot = 0.0_f64;
    let mut row_perm: Vec<usize> = (0..rows).collect();
    let mut col_perm: Vec<usize> = (0..cols).collect();
    for step in 0..steps {
        // full pivot search over the active submatrix
        let (mut pr, mut pc, mut pv) = (step, step, 0.0_f64);
        for r in step..rows {
            for c in step..cols {
                let v = a[row_perm[r] * cols + col_perm[c]].abs();
                if v > pv {
                    pv = v;
                    pr = r;
                    pc = c;
                }
            }
        }
        if step == 0 {
            largest_pivot = pv;
        }
        if pv <= tol * largest_pivot || pv == 0.0 {
            break;
        }
        row_perm.swap(step, pr);
        col_perm.swap(step, pc);
        rank += 1;
        let prow = row_perm[step];
        let pcol = col_perm[step];
        let pivot = a[prow * cols + pcol];
        for r in step + 1..rows {
            let rr = row_perm[r];
            let f = a[rr * cols + pcol] / pivot;
            if f == 0.0 {
                continue;
            }
            for c in step..cols {
                let cc = col_perm[c];
                a[rr * cols + cc] -= f * a[prow * cols + cc];
            }
        }
    }
    rank
}

/// Smallest eigenvalue of a symmetric matrix via cyclic Jacobi rotations.
/// Evaluation-only (no gradient). Sweeps run until the off-diagonal norm
/// drops below 1e-12 relative to the matrix scale.
pub fn min_eig_spd(w: &Tensor) -> Result<f64> {
    if w.rank() != 2 || w.shape()[0] != w.shape()[1] {
        return Err(AdError::Dimension {
            op: "min_eig_spd",
            detail: format!("square matrix required, got {:?}", w.shape()),
        });
    }
    let n = w.shape()[0];
    if n > 8 {
        return Err(AdError::Usage(format!("min_eig_spd supports n <= 8, got {n}")));
    }
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((w.at2(i, j) - w.at2(j, i)).abs());
        }
    }
    if asym > 1e-8 {
        return Err(AdError::Usage(format!(
            "min_eig_spd requires a symmetric matrix (asymmetry {asym:.3e})"
        )));
    }
    if n == 1 {
        return Ok(w.at2(0, 0));
    }

    let mut a = w.data().to_vec();
    let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let target = 1e-12 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
        }
        if off.sqrt() <= target {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    Ok((0..n).map(|i| a[i * n + i]).fold(f64::INFINITY, f64::min))
}

/// Gramian summary for one linearization: the matrix itself, its jittered
/// log-determinant, minimum eigenvalue, and controllability-matrix rank.
#[derive(Debug, Clone)]
pub struct GramianReport {
    pub w: Tensor,
    pub logdet: f64,
    pub min_eig: f64,
    pub rank: usize,
}

pub fn gramian_report(a: &Tensor, b: &Tensor, jitter: f64, rank_tol: f64) -> Result<GramianReport> {
    let c = controllability_matrix(a, b)?;
    let w = gramian(&c)?;
    let rank = numerical_rank(&c, rank_tol);
    let min_eig = min_eig_spd(&w)?;
    let mut tape = Tape::new();
    let wi = tape.leaf(w.clone());
    let ld = tape.logdet_spd(wi, jitter)?;
    let logdet = tape.value(ld).item()?;
    Ok(GramianReport { w, logdet, min_eig, rank })
}

// ---- traced (differentiable) versions ----

/// Tape-recorded controllability matrix from tape-resident A and B.
pub fn controllability_matrix_traced(tape: &mut Tape, a: VarId, b: VarId) -> Result<VarId> {
    let n = {
        let va = tape.value(a);
        if va.rank() != 2 || va.shape()[0] != va.shape()[1] {
            return Err(AdError::Dimension {
                op: "controllability_matrix",
                detail: format!("square A required, got {:?}", va.shape()),
            });
        }
        va.shape()[0]
    };
    {
        let vb = tape.value(b);
        if vb.rank() != 2 || vb.shape()[0] != n {
            return Err(AdError::Dimension {
                op: "controllability_matrix",
                detail: format!("B must be [{n}, m], got {:?}", vb.shape()),
            });
        }
    }
    let mut blocks = vec![b];
    for _ in 1..n {
        let next = tape.matmul(a, *blocks.last().unwrap())?;
        blocks.push(next);
    }
    tape.concat_cols(&blocks)
}

/// Tape-recorded W = C C^T.
pub fn gramian_traced(tape: &mut Tape, c: VarId) -> Result<VarId> {
    let ct = tape.transpose(c)?;
    tape.matmul(c, ct)
}

/// Mean log-det Gramian over a batch of linearizations; differentiable
/// through every A and B.
pub fn constraint_logdet(tape: &mut Tape, lins: &[(VarId, VarId)], jitter: f64) -> Result<VarId> {
    if lins.is_empty() {
        return Err(AdError::Usage("constraint_logdet requires a nonempty batch".into()));
    }
    let mut acc: Option<VarId> = None;
    for &(a, b) in lins {
        let c = controllability_matrix_traced(tape, a, b)?;
        let w = gramian_traced(tape, c)?;
        let term = tape.logdet_spd(w, jitter)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    tape.scale(acc.unwrap(), 1.0 / lins.len() as f64)
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(AdError::Dimension {
            op: "controllability_matrix",
            detail: format!("square A required, got {:?}", a.shape()),
        });
    }
    let n = a.shape()[0];
    if b.rank() != 2 || b.shape()[0] != n {
        return Err(AdError::Dimension {
            op: "controllability_matrix",
            detail: format!("B must be [{n}, m], got {:?}", b.shape()),
        });
    }
    Ok((n, b.shape()[1]))
}
