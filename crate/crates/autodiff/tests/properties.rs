//! Structural invariants: adjointness, log-det inverse identity, determinism.

use cgram_autodiff::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn rand_tensor(r: &mut ChaCha12Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn conv_and_transpose_satisfy_adjoint_identity() {
    // <conv2d(u; W), v> == <u, conv_transpose2d(v; W)> on conforming shapes.
    let mut r = ChaCha12Rng::seed_from_u64(40);
    for case in 0..20 {
        let (cin, cout) = (1 + case % 3, 1 + (case / 3) % 3);
        let (h, w) = (4 + case % 4, 4 + (case / 2) % 4);
        let (kh, kw) = (3, 3);
        let stride = (1 + case % 2, 1 + (case / 2) % 2);
        let padding = (kh / 2, kw / 2);
        let oh = (h + 2 * padding.0 - kh) / stride.0 + 1;
        let ow = (w + 2 * padding.1 - kw) / stride.1 + 1;

        let u = rand_tensor(&mut r, &[1, cin, h, w]);
        let kernel = rand_tensor(&mut r, &[cout, cin, kh, kw]);
        let v = rand_tensor(&mut r, &[1, cout, oh, ow]);

        let mut tape = Tape::new();
        let ui = tape.leaf(u.clone());
        let ki = tape.leaf(kernel);
        let vi = tape.leaf(v.clone());
        let conv = tape.conv2d(ui, ki, stride, padding).unwrap();
        let convt = tape.conv_transpose2d(vi, ki, stride, padding, (h, w)).unwrap();

        let lhs = dot(tape.value(conv).data(), v.data());
        let rhs = dot(u.data(), tape.value(convt).data());
        let scale = 1.0_f64.max(lhs.abs()).max(rhs.abs());
        assert!(
            (lhs - rhs).abs() / scale <= 1e-10,
            "case {case}: <conv u, v>={lhs} vs <u, convT v>={rhs}"
        );
    }
}

#[test]
fn logdet_of_matrix_and_inverse_cancel() {
    let mut r = ChaCha12Rng::seed_from_u64(41);
    for _ in 0..20 {
        let n = 2 + (r.gen::<u32>() % 3) as usize;
        let a = rand_tensor(&mut r, &[n, n]);
        // M = A^T A + I (SPD); invert by Gauss-Jordan for the identity check.
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
        let mut aug = vec![0.0; n * 2 * n];
        for i in 0..n {
            for j in 0..n {
                aug[i * 2 * n + j] = m[i * n + j];
            }
            aug[i * 2 * n + n + i] = 1.0;
        }
        for col in 0..n {
            let mut pivot_row = col;
            for row in col + 1..n {
                if aug[row * 2 * n + col].abs() > aug[pivot_row * 2 * n + col].abs() {
                    pivot_row = row;
                }
            }
            for j in 0..2 * n {
                aug.swap(col * 2 * n + j, pivot_row * 2 * n + j);
            }
            let pivot = aug[col * 2 * n + col];
            for j in 0..2 * n {
                aug[col * 2 * n + j] /= pivot;
            }
            for row in 0..n {
                if row != col {
                    let f = aug[row * 2 * n + col];
                    for j in 0..2 * n {
                        aug[row * 2 * n + j] -= f * aug[col * 2 * n + j];
                    }
                }
            }
        }
        let mut minv = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                minv[i * n + j] = aug[i * 2 * n + n + j];
            }
        }

        let mut tape = Tape::new();
        let mi = tape.leaf(Tensor::new(vec![n, n], m).unwrap());
        let mii = tape.leaf(Tensor::new(vec![n, n], minv).unwrap());
        let ld = tape.logdet_spd(mi, 0.0).unwrap();
        let ldi = tape.logdet_spd(mii, 0.0).unwrap();
        let total = tape.value(ld).item().unwrap() + tape.value(ldi).item().unwrap();
        assert!(total.abs() <= 1e-8, "logdet(M) + logdet(M^-1) = {total}");
    }
}

#[test]
fn tape_evaluation_is_deterministic() {
    // Identical seeds produce bit-identical losses and gradients.
    let run = |seed: u64| -> (f64, Vec<f64>) {
        let mut r = ChaCha12Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut r, &[2, 2, 6, 6]);
        let k = rand_tensor(&mut r, &[4, 2, 3, 3]);
        let w = rand_tensor(&mut r, &[4 * 3 * 3, 3]);
        let b = rand_tensor(&mut r, &[3]);

        let mut tape = Tape::new();
        let xi = tape.leaf(x);
        let ki = tape.leaf(k.with_grad());
        let wi = tape.leaf(w.with_grad());
        let bi = tape.leaf(b.with_grad());
        let conv = tape.conv2d(xi, ki, (2, 2), (1, 1)).unwrap();
        let act = tape.sigmoid(conv).unwrap();
        let flat = tape.reshape(act, &[2, 4 * 3 * 3]).unwrap();
        let aff = tape.affine(flat, wi, bi).unwrap();
        let loss = tape.mean(aff).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut flat_grads = Vec::new();
        for id in [ki, wi, bi] {
            flat_grads.extend_from_slice(grads.get(id).unwrap().data());
        }
        (tape.value(loss).item().unwrap(), flat_grads)
    };

    let (l1, g1) = run(7);
    let (l2, g2) = run(7);
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(g1.len(), g2.len());
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_rejects_mismatched_shapes(rows in 1usize..5, cols in 1usize..5, extra in 1usize..4) {
        let data = vec![0.5; rows * cols + extra];
        prop_assert!(Tensor::new(vec![rows, cols], data).is_err());
    }

    #[test]
    fn sum_equals_mean_times_len(values in proptest::collection::vec(-100.0f64..100.0, 1..40)) {
        let n = values.len();
        let t = Tensor::from_vec(values).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(t);
        let s = tape.sum(x).unwrap();
        let m = tape.mean(x).unwrap();
        let sum = tape.value(s).item().unwrap();
        let mean = tape.value(m).item().unwrap();
        prop_assert!((sum - mean * n as f64).abs() <= 1e-9 * (1.0 + sum.abs()));
    }

    #[test]
    fn matmul_associates_with_identity(rows in 1usize..5, cols in 1usize..5, seed in 0u64..1000) {
        let mut r = ChaCha12Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut r, &[rows, cols]);
        let mut tape = Tape::new();
        let ai = tape.leaf(a.clone());
        let eye = tape.leaf(Tensor::eye(cols));
        let prod = tape.matmul(ai, eye).unwrap();
        prop_assert_eq!(tape.value(prod).data(), a.data());
    }
}
