//! Shape-unaware compute kernels shared by the tape operations and the
//! untraced evaluation paths. All buffers are row-major `f64` slices.

/// C\[m,n\] = A\[m,k\] * B\[k,n\]
pub fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// C\[m,n\] = A\[m,k\] * B\[n,k\]^T  (dot products of rows)
///
/// The reduction runs four independent accumulator chains; the summation
/// order is fixed, so results stay run-to-run deterministic.
pub fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let k4 = k - k % 4;
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
            let mut p = 0;
            while p < k4 {
                s0 += arow[p] * brow[p];
                s1 += arow[p + 1] * brow[p + 1];
                s2 += arow[p + 2] * brow[p + 2];
                s3 += arow[p + 3] * brow[p + 3];
                p += 4;
            }
            let mut acc = (s0 + s1) + (s2 + s3);
            while p < k {
                acc += arow[p] * brow[p];
                p += 1;
            }
            orow[j] = acc;
        }
    }
}

/// C\[m,n\] = A\[k,m\]^T * B\[k,n\]  (accumulated rank-1 updates)
pub fn mm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn transpose(a: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
}

/// Output spatial size of a valid cross-correlation:
/// floor((input + 2*pad - kernel) / stride) + 1.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Gather conv patches into a \[oh*ow, cin*kh*kw\] matrix for one image.
///
/// Out-of-bounds taps read as zero (zero padding).
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    cols: &mut [f64],
) {
    let oh = conv_out_len(h, kh, sh, ph).unwrap();
    let ow = conv_out_len(w, kw, sw, pw).unwrap();
    let patch = cin * kh * kw;
    debug_assert_eq!(cols.len(), oh * ow * patch);
    cols.fill(0.0);
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut cols[(oy * ow + ox) * patch..(oy * ow + ox + 1) * patch];
            let y0 = (oy * sh) as isize - ph as isize;
            let x0 = (ox * sw) as isize - pw as isize;
            for c in 0..cin {
                let plane = &x[c * h * w..(c + 1) * h * w];
                for ky in 0..kh {
                    let iy = y0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let base = c * kh * kw + ky * kw;
                    for kx in 0..kw {
                        let ix = x0 + kx as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[base + kx] = row[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch columns back onto the image.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    x: &mut [f64],
) {
    let oh = conv_out_len(h, kh, sh, ph).unwrap();
    let ow = conv_out_len(w, kw, sw, pw).unwrap();
    let patch = cin * kh * kw;
    debug_assert_eq!(cols.len(), oh * ow * patch);
    debug_assert_eq!(x.len(), cin * h * w);
    x.fill(0.0);
    for oy in 0..oh {
        for ox in 0..ow {
            let src = &cols[(oy * ow + ox) * patch..(oy * ow + ox + 1) * patch];
            let y0 = (oy * sh) as isize - ph as isize;
            let x0 = (ox * sw) as isize - pw as isize;
            for c in 0..cin {
                let plane = &mut x[c * h * w..(c + 1) * h * w];
                for ky in 0..kh {
                    let iy = y0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let base = c * kh * kw + ky * kw;
                    for kx in 0..kw {
                        let ix = x0 + kx as isize;
                        if ix >= 0 && ix < w as isize {
                            row[ix as usize] += src[base + kx];
                        }
                    }
                }
            }
        }
    }
}

pub fn relu(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v > 0.0 { v } else { 0.0 };
    }
}

pub fn relu_backward(x: &[f64], dy: &[f64], dx: &mut [f64]) {
    for ((d, &v), &g) in dx.iter_mut().zip(x).zip(dy) {
        *d += if v > 0.0 { g } else { 0.0 };
    }
}

/// Numerically stable logistic map. The output is clamped into the open
/// interval (0,1) at f64 granularity so downstream `ln` terms stay finite.
pub fn sigmoid(x: &[f64], out: &mut [f64]) {
    const LO: f64 = 1e-15;
    const HI: f64 = 1.0 - 1e-15;
    for (o, &v) in out.iter_mut().zip(x) {
        let s = if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        };
        *o = s.clamp(LO, HI);
    }
}

pub fn sigmoid_backward(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    for ((d, &s), &g) in dx.iter_mut().zip(y).zip(dy) {
        *d += g * s * (1.0 - s);
    }
}

/// In-place lower Cholesky factor of a symmetric positive-definite matrix.
/// Returns the failing pivot index if the matrix is not SPD.
pub fn cholesky(m: &[f64], n: usize, l: &mut [f64]) -> std::result::Result<(), usize> {
    debug_assert_eq!(m.len(), n * n);
    l.fill(0.0);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i * n + j];
            for p in 0..j {
                sum -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(i);
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(())
}

/// ln det(M) from a lower Cholesky factor: 2 * sum ln L_ii.
pub fn logdet_from_cholesky(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| l[i * n + i].ln()).sum::<f64>() * 2.0
}

/// Inverse of an SPD matrix from its lower Cholesky factor.
pub fn spd_inverse_from_cholesky(l: &[f64], n: usize, inv: &mut [f64]) {
    // Forward-substitute columns of I to get L^-1, then inv = L^-T L^-1.
    let mut linv = vec![0.0; n * n];
    for col in 0..n {
        for i in col..n {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for p in col..i {
                sum -= l[i * n + p] * linv[p * n + col];
            }
            linv[i * n + col] = sum / l[i * n + i];
        }
    }
    for i in 0..n {
        for j in 0..n {
            let mut sum = 0.0;
            for p in i.max(j)..n {
                sum += linv[p * n + i] * linv[p * n + j];
            }
            inv[i * n + j] = sum;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mm_small() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        mm(&a, &b, 2, 2, 2, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn mm_variants_agree() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // 3x4
        let mut c = vec![0.0; 8];
        mm(&a, &b, 2, 3, 4, &mut c);

        // A * B == A * (B^T)^T
        let mut bt = vec![0.0; 12];
        transpose(&b, 3, 4, &mut bt);
        let mut c2 = vec![0.0; 8];
        mm_nt(&a, &bt, 2, 3, 4, &mut c2);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-14);
        }

        // A * B == (A^T)^T * B
        let mut at = vec![0.0; 6];
        transpose(&a, 2, 3, &mut at);
        let mut c3 = vec![0.0; 8];
        mm_tn(&at, &b, 3, 2, 4, &mut c3);
        for (x, y) in c.iter().zip(&c3) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn conv_geometry() {
        assert_eq!(conv_out_len(48, 3, 2, 1), Some(24));
        assert_eq!(conv_out_len(24, 3, 2, 1), Some(12));
        assert_eq!(conv_out_len(80, 5, 1, 2), Some(80));
        assert_eq!(conv_out_len(80, 5, 2, 2), Some(40));
        assert_eq!(conv_out_len(2, 5, 1, 0), None);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for random-ish x et c.
        let (cin, h, w, kh, kw, sh, sw, ph, pw) = (2, 5, 4, 3, 3, 2, 1, 1, 1);
        let oh = conv_out_len(h, kh, sh, ph).unwrap();
        let ow = conv_out_len(w, kw, sw, pw).unwrap();
        let x: Vec<f64> = (0..cin * h * w).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let c: Vec<f64> =
            (0..oh * ow * cin * kh * kw).map(|i| ((i * 5 % 11) as f64) * 0.3 - 1.5).collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, cin, h, w, kh, kw, sh, sw, ph, pw, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, cin, h, w, kh, kw, sh, sw, ph, pw, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn cholesky_identity() {
        let m = [1.0, 0.0, 0.0, 1.0];
        let mut l = [0.0; 4];
        cholesky(&m, 2, &mut l).unwrap();
        assert_eq!(logdet_from_cholesky(&l, 2), 0.0);
        let mut inv = [0.0; 4];
        spd_inverse_from_cholesky(&l, 2, &mut inv);
        assert_eq!(inv, m);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = [1.0, 2.0, 2.0, 1.0]; // eigenvalues 3, -1
        let mut l = [0.0; 4];
        assert!(cholesky(&m, 2, &mut l).is_err());
    }

    #[test]
    fn sigmoid_stays_open_interval() {
        let x = [-1000.0, -37.0, 0.0, 37.0, 1000.0];
        let mut y = [0.0; 5];
        sigmoid(&x, &mut y);
        for &v in &y {
            assert!(v > 0.0 && v < 1.0);
        }
        assert_eq!(y[2], 0.5);
    }
}
