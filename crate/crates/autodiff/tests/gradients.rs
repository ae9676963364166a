//! Finite-difference gradient checks and forward-value oracles for every
//! differentiable operation.

use cgram_autodiff::gradcheck::gradcheck;
use cgram_autodiff::{Tape, Tensor, VarId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn rand_tensor(r: &mut ChaCha12Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.gen_range(-1.5..1.5)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random tensor with entries kept away from zero (for kinked maps).
fn rand_tensor_nonzero(r: &mut ChaCha12Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * r.gen_range(0.05..1.5)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn rand_spd(r: &mut ChaCha12Rng, n: usize) -> Tensor {
    // A^T A + I is comfortably SPD.
    let a = rand_tensor(r, &[n, n]);
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = if i == j { 1.0 } else { 0.0 };
            for k in 0..n {
                s += a.at2(k, i) * a.at2(k, j);
            }
            m[i * n + j] = s;
        }
    }
    Tensor::new(vec![n, n], m).unwrap()
}

// ---- forward oracles ----

#[test]
fn affine_matches_triple_loop_oracle() {
    let mut r = rng(1);
    let x = rand_tensor(&mut r, &[3, 4]);
    let w = rand_tensor(&mut r, &[4, 2]);
    let b = rand_tensor(&mut r, &[2]);

    let mut expected = vec![0.0; 3 * 2];
    for i in 0..3 {
        for j in 0..2 {
            let mut acc = b.data()[j];
            for k in 0..4 {
                acc += x.at2(i, k) * w.at2(k, j);
            }
            expected[i * 2 + j] = acc;
        }
    }

    let mut tape = Tape::new();
    let xi = tape.leaf(x);
    let wi = tape.leaf(w);
    let bi = tape.leaf(b);
    let y = tape.affine(xi, wi, bi).unwrap();
    for (got, want) in tape.value(y).data().iter().zip(&expected) {
        assert!((got - want).abs() <= 1e-12);
    }
}

/// Direct sliding-window cross-correlation, independent of im2col.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &Tensor,
    k: &Tensor,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
) -> Vec<f64> {
    let (b, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut out = vec![0.0; b * cout * oh * ow];
    for bi in 0..b {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    let xv = x.data()[((bi * cin + ci) * h + iy as usize) * w
                                        + ix as usize];
                                    let kv = k.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                    acc += xv * kv;
                                }
                            }
                        }
                    }
                    out[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_sliding_window_oracle() {
    let mut r = rng(2);
    for &(ph, pw) in &[(0usize, 0usize), (1, 1)] {
        let x = rand_tensor(&mut r, &[1, 2, 6, 6]);
        let k = rand_tensor(&mut r, &[3, 2, 3, 3]);
        let expected = conv_oracle(&x, &k, 2, 2, ph, pw);

        let mut tape = Tape::new();
        let xi = tape.leaf(x);
        let ki = tape.leaf(k);
        let y = tape.conv2d(xi, ki, (2, 2), (ph, pw)).unwrap();
        assert_eq!(tape.value(y).len(), expected.len());
        for (got, want) in tape.value(y).data().iter().zip(&expected) {
            assert!((got - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn logdet_matches_lu_pivot_oracle() {
    // ln det via partial-pivot LU, independent of the Cholesky path.
    fn lu_logdet(m: &Tensor) -> f64 {
        let n = m.shape()[0];
        let mut a = m.data().to_vec();
        let mut logdet = 0.0;
        for col in 0..n {
            let (mut best, mut best_abs) = (col, a[col * n + col].abs());
            for row in col + 1..n {
                if a[row * n + col].abs() > best_abs {
                    best = row;
                    best_abs = a[row * n + col].abs();
                }
            }
            if best != col {
                for j in 0..n {
                    a.swap(col * n + j, best * n + j);
                }
            }
            let pivot = a[col * n + col];
            logdet += pivot.abs().ln();
            for row in col + 1..n {
                let f = a[row * n + col] / pivot;
                for j in col..n {
                    a[row * n + j] -= f * a[col * n + j];
                }
            }
        }
        logdet
    }

    let mut r = rng(3);
    for _ in 0..10 {
        let m = rand_spd(&mut r, 4);
        let expected = lu_logdet(&m);
        let mut tape = Tape::new();
        let mi = tape.leaf(m);
        let y = tape.logdet_spd(mi, 0.0).unwrap();
        assert!((tape.value(y).item().unwrap() - expected).abs() <= 1e-10);
    }
}

// ---- finite-difference checks, 10 random points per op ----

fn assert_fd_many<F>(name: &str, build: F, draw: impl Fn(&mut ChaCha12Rng) -> Vec<Tensor>, seed: u64)
where
    F: Fn(&mut Tape, &[VarId]) -> cgram_autodiff::Result<VarId>,
{
    let mut r = rng(seed);
    for point in 0..10 {
        let inputs = draw(&mut r);
        let report = gradcheck(&build, &inputs, FD_STEP).unwrap();
        assert!(
            report.max_rel_err <= FD_TOL,
            "{name} point {point}: rel err {} > {FD_TOL}",
            report.max_rel_err
        );
    }
}

#[test]
fn fd_elementwise_ops() {
    assert_fd_many(
        "add/mul/sub mix",
        |t, ids| {
            let s = t.add(ids[0], ids[1])?;
            let p = t.mul(s, ids[2])?;
            let d = t.sub(p, ids[0])?;
            t.sum(d)
        },
        |r| (0..3).map(|_| rand_tensor(r, &[2, 3])).collect(),
        10,
    );
}

#[test]
fn fd_relu() {
    assert_fd_many(
        "relu",
        |t, ids| {
            let y = t.relu(ids[0])?;
            t.sum(y)
        },
        |r| vec![rand_tensor_nonzero(r, &[3, 3])],
        11,
    );
}

#[test]
fn fd_sigmoid() {
    assert_fd_many(
        "sigmoid",
        |t, ids| {
            let y = t.sigmoid(ids[0])?;
            t.sum(y)
        },
        |r| vec![rand_tensor(r, &[2, 4])],
        12,
    );
}

#[test]
fn sigmoid_gradient_at_zero_is_quarter() {
    let x = Tensor::from_vec(vec![0.0]).unwrap();
    let report = gradcheck(
        |t, ids| {
            let y = t.sigmoid(ids[0])?;
            t.sum(y)
        },
        &[x.clone()],
        FD_STEP,
    )
    .unwrap();
    assert!(report.max_rel_err <= 1e-6);

    let mut tape = Tape::new();
    let xi = tape.leaf(x.with_grad());
    let y = tape.sigmoid(xi).unwrap();
    let loss = tape.sum(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!((grads.get(xi).unwrap().data()[0] - 0.25).abs() <= 1e-12);
}

#[test]
fn fd_ln_exp() {
    assert_fd_many(
        "ln(exp(x)+1)",
        |t, ids| {
            let e = t.exp(ids[0])?;
            let shifted = t.add_scalar(e, 1.0)?;
            let l = t.ln(shifted)?;
            t.sum(l)
        },
        |r| vec![rand_tensor(r, &[2, 2])],
        13,
    );
}

#[test]
fn fd_matmul_transpose() {
    assert_fd_many(
        "matmul with transpose",
        |t, ids| {
            let bt = t.transpose(ids[1])?;
            let y = t.matmul(ids[0], bt)?;
            t.sum(y)
        },
        |r| vec![rand_tensor(r, &[3, 2]), rand_tensor(r, &[4, 2])],
        14,
    );
}

#[test]
fn fd_affine() {
    assert_fd_many(
        "affine",
        |t, ids| {
            let y = t.affine(ids[0], ids[1], ids[2])?;
            t.sum(y)
        },
        |r| vec![rand_tensor(r, &[2, 3]), rand_tensor(r, &[3, 2]), rand_tensor(r, &[2])],
        15,
    );
}

#[test]
fn fd_conv2d() {
    assert_fd_many(
        "conv2d",
        |t, ids| {
            let y = t.conv2d(ids[0], ids[1], (2, 2), (1, 1))?;
            t.sum(y)
        },
        |r| vec![rand_tensor(r, &[1, 2, 5, 5]), rand_tensor(r, &[3, 2, 3, 3])],
        16,
    );
}

#[test]
fn fd_conv_transpose2d() {
    assert_fd_many(
        "conv_transpose2d",
        |t, ids| {
            let y = t.conv_transpose2d(ids[0], ids[1], (2, 2), (1, 1), (6, 6))?;
            t.sum(y)
        },
        |r| vec![rand_tensor(r, &[1, 3, 3, 3]), rand_tensor(r, &[3, 2, 3, 3])],
        17,
    );
}

#[test]
fn fd_conv_bias() {
    assert_fd_many(
        "conv_bias",
        |t, ids| {
            let y = t.conv_bias(ids[0], ids[1])?;
            t.sum(y)
        },
        |r| vec![rand_tensor(r, &[2, 3, 2, 2]), rand_tensor(r, &[3])],
        18,
    );
}

#[test]
fn fd_narrow_concat_reshape() {
    assert_fd_many(
        "narrow/concat/reshape",
        |t, ids| {
            let left = t.narrow(ids[0], 1, 0, 2)?;
            let right = t.narrow(ids[0], 1, 2, 2)?;
            let swapped = t.concat_cols(&[right, left])?;
            let top = t.narrow(swapped, 0, 0, 1)?;
            let bottom = t.narrow(swapped, 0, 1, 2)?;
            let stacked = t.concat_rows(&[bottom, top])?;
            let flat = t.reshape(stacked, &[12])?;
            let sq = t.mul(flat, flat)?;
            t.sum(sq)
        },
        |r| vec![rand_tensor(r, &[3, 4])],
        19,
    );
}

#[test]
fn fd_mean_scale() {
    assert_fd_many(
        "mean/scale/neg",
        |t, ids| {
            let s = t.scale(ids[0], 2.5)?;
            let n = t.neg(s)?;
            t.mean(n)
        },
        |r| vec![rand_tensor(r, &[3, 3])],
        20,
    );
}

#[test]
fn fd_logdet_spd() {
    let mut r = rng(21);
    for _ in 0..10 {
        let m = rand_spd(&mut r, 4);
        let report = gradcheck(
            |t, ids| t.logdet_spd(ids[0], 0.0),
            &[m],
            FD_STEP,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-5, "logdet rel err {}", report.max_rel_err);
    }
}

#[test]
fn fd_composite_network() {
    // conv2d -> affine -> sigmoid -> sum, every parameter checked.
    assert_fd_many(
        "composite conv/affine/sigmoid",
        |t, ids| {
            let conv = t.conv2d(ids[0], ids[1], (2, 2), (1, 1))?;
            let cb = t.conv_bias(conv, ids[2])?;
            let act = t.relu(cb)?;
            let flat = t.reshape(act, &[1, 2 * 3 * 3])?;
            let aff = t.affine(flat, ids[3], ids[4])?;
            let sig = t.sigmoid(aff)?;
            t.sum(sig)
        },
        |r| {
            vec![
                rand_tensor_nonzero(r, &[1, 2, 5, 5]),
                rand_tensor_nonzero(r, &[2, 2, 3, 3]),
                rand_tensor_nonzero(r, &[2]),
                rand_tensor(r, &[18, 4]),
                rand_tensor(r, &[4]),
            ]
        },
        22,
    );
}
