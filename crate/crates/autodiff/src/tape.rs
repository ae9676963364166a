//! Append-only operation tape for reverse-mode differentiation.
//!
//! One tape records one forward pass; `backward` walks the nodes in strict
//! reverse creation order. There is no persistent graph: a training step
//! builds a fresh tape, differentiates it and drops it.

use crate::error::{AdError, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

#[derive(Debug, Clone)]
enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    AddScalar,
    MatMul,
    Transpose,
    Affine,
    Conv2d { stride: (usize, usize), padding: (usize, usize) },
    ConvTranspose2d { stride: (usize, usize), padding: (usize, usize) },
    ConvBias,
    Relu,
    Sigmoid,
    Ln,
    Exp,
    Sum,
    Mean,
    Reshape,
    Narrow { dim: usize, start: usize },
    ConcatRows,
    ConcatCols,
    LogDetSpd,
}

struct TapeNode {
    op: OpKind,
    inputs: Vec<VarId>,
    value: Tensor,
    /// Tensors the backward pass needs that are not node values
    /// (im2col patches, SPD inverses). Empty when gradients are off.
    saved: Vec<Tensor>,
    needs_grad: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: VarId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    /// Gradient for `id`, or zeros of the given shape if the value never
    /// influenced the loss.
    pub fn get_or_zeros(&self, id: VarId, shape: &[usize]) -> Tensor {
        match self.get(id) {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn needs_grad(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn leaf(&mut self, t: Tensor) -> VarId {
        let needs = t.requires_grad();
        self.push(OpKind::Leaf, vec![], t, vec![], needs)
    }

    /// Leaf that never receives a gradient regardless of the tensor flag.
    pub fn constant(&mut self, mut t: Tensor) -> VarId {
        t.set_requires_grad(false);
        self.push(OpKind::Leaf, vec![], t, vec![], false)
    }

    fn push(
        &mut self,
        op: OpKind,
        inputs: Vec<VarId>,
        value: Tensor,
        saved: Vec<Tensor>,
        needs_grad: bool,
    ) -> VarId {
        self.nodes.push(TapeNode { op, inputs, value, saved, needs_grad });
        VarId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    fn same_shape(&self, a: VarId, b: VarId, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(AdError::Dimension {
                op,
                detail: format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data).check_finite("add")?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(OpKind::Add, vec![a, b], t, vec![], ng))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data).check_finite("sub")?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(OpKind::Sub, vec![a, b], t, vec![], ng))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape(a, b, "mul")?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data).check_finite("mul")?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(OpKind::Mul, vec![a, b], t, vec![], ng))
    }

    pub fn neg(&mut self, a: VarId) -> Result<VarId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| -x).collect();
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let ng = self.any_grad(&[a]);
        Ok(self.push(OpKind::Neg, vec![a], t, vec![], ng))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> Result<VarId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data).check_finite("scale")?;
        let ng = self.any_grad(&[a]);
        Ok(self.push(OpKind::Scale(c), vec![a], t, vec![], ng))
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> Result<VarId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x + c).collect();
        let t =
            Tensor::from_raw(self.value(a).shape().to_vec(), data).check_finite("add_scalar")?;
        let ng = self.any_grad(&[a]);
        Ok(self.push(OpKind::AddScalar, vec![a], t, vec![], ng))
    }

    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        let mut data = vec![0.0; self.value(a).len()];
        kernels::relu(self.value(a).data(), &mut data);
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let ng = self.any_grad(&[a]);
        Ok(self.push(OpKind::Relu, vec![a], t, vec![], ng))
    }

    pub fn sigmoid(&mut self, a: VarId) -> Result<VarId> {
        let mut data = vec![0.0; self.value(a).len()];
        kernels::sigmoid(self.value(a).data(), &mut data);
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let ng = self.any_grad(&[a]);
        Ok(self.push(OpKind::Sigmoid, vec![a], t, vec![], ng))
    }

    pub fn ln(&mut self, a: VarId) -> Result<VarId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.ln()).collect();
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data).check_finite("ln")?;
        let ng = self.any_grad(&[a]);
        Ok(self.push(OpKind::Ln, vec![a], t, vec![], ng))
    }

    pub fn exp(&mut self, a: VarId) -> Result<VarId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.exp()).collect();
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data).check_finite("exp")?;
        let ng = self.any_grad(&[a]);
        Ok(self.push(OpKind::Exp, vec![a], t, vec![], ng))
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: VarId) -> Result<VarId> {
        let s: f64 = self.value(a).data().iter().sum();
        let t = Tensor::from_raw(vec![], vec![s]).check_finite("sum")?;
        let ng = self.any_grad(&[a]);
        Ok(self.push(OpKind::Sum, vec![a], t, vec![], ng))
    }

    pub fn mean(&mut self, a: VarId) -> Result<VarId> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(AdError::Usage("mean of empty tensor".into()));
        }
        let s: f64 = self.value(a).data().iter().sum::<f64>() / n as f64;
        let t = Tensor::from_raw(vec![], vec![s]).check_finite("mean")?;
        let ng = self.any_grad(&[a]);
        Ok(self.push(OpKind::Mean, vec![a], t, vec![], ng))
    }

    // ---- shape ----

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> Result<VarId> {
        let t = self.value(a).reshaped(shape)?;
        let ng = self.any_grad(&[a]);
        Ok(self.push(OpKind::Reshape, vec![a], t, vec![], ng))
    }

    /// Contiguous range along dimension 0 or 1 of a rank-2 tensor.
    pub fn narrow(&mut self, a: VarId, dim: usize, start: usize, len: usize) -> Result<VarId> {
        let v = self.value(a);
        if v.rank() != 2 || dim > 1 {
            return Err(AdError::Dimension {
                op: "narrow",
                detail: format!("rank-2 tensor and dim in {{0,1}} required, got {:?}", v.shape()),
            });
        }
        let (rows, cols) = (v.shape()[0], v.shape()[1]);
        let bound = if dim == 0 { rows } else { cols };
        if start + len > bound {
            return Err(AdError::Dimension {
                op: "narrow",
                detail: format!("range {start}..{} exceeds dim size {bound}", start + len),
            });
        }
        let (t, ng) = {
            let data = if dim == 0 {
                v.data()[start * cols..(start + len) * cols].to_vec()
            } else {
                let mut out = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    out.extend_from_slice(&v.data()[r * cols + start..r * cols + start + len]);
                }
                out
            };
            let shape = if dim == 0 { vec![len, cols] } else { vec![rows, len] };
            (Tensor::from_raw(shape, data), self.any_grad(&[a]))
        };
        Ok(self.push(OpKind::Narrow { dim, start }, vec![a], t, vec![], ng))
    }

    /// Stack rank-2 tensors with equal column counts along dimension 0.
    pub fn concat_rows(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(AdError::Usage("concat_rows of empty list".into()));
        }
        let cols = self.value(parts[0]).shape().get(1).copied().ok_or(AdError::Dimension {
            op: "concat_rows",
            detail: "rank-2 tensors required".into(),
        })?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.shape()[1] != cols {
                return Err(AdError::Dimension {
                    op: "concat_rows",
                    detail: format!("expected [_, {cols}], got {:?}", v.shape()),
                });
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let t = Tensor::from_raw(vec![rows, cols], data);
        let ng = self.any_grad(parts);
        Ok(self.push(OpKind::ConcatRows, parts.to_vec(), t, vec![], ng))
    }

    /// Stack rank-2 tensors with equal row counts along dimension 1.
    pub fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(AdError::Usage("concat_cols of empty list".into()));
        }
        let rows = self.value(parts[0]).shape().first().copied().ok_or(AdError::Dimension {
            op: "concat_cols",
            detail: "rank-2 tensors required".into(),
        })?;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let v = self.value(p);
                if v.rank() == 2 && v.shape()[0] == rows {
                    Ok(v.shape()[1])
                } else {
                    Err(AdError::Dimension {
                        op: "concat_cols",
                        detail: format!("expected [{rows}, _], got {:?}", v.shape()),
                    })
                }
            })
            .collect::<Result<_>>()?;
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let t = Tensor::from_raw(vec![rows, total], data);
        let ng = self.any_grad(parts);
        Ok(self.push(OpKind::ConcatCols, parts.to_vec(), t, vec![], ng))
    }

    pub fn transpose(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a);
        if v.rank() != 2 {
            return Err(AdError::Dimension {
                op: "transpose",
                detail: format!("rank-2 required, got {:?}", v.shape()),
            });
        }
        let (r, c) = (v.shape()[0], v.shape()[1]);
        let mut data = vec![0.0; r * c];
        kernels::transpose(v.data(), r, c, &mut data);
        let t = Tensor::from_raw(vec![c, r], data);
        let ng = self.any_grad(&[a]);
        Ok(self.push(OpKind::Transpose, vec![a], t, vec![], ng))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(AdError::Dimension {
                op: "matmul",
                detail: format!("{:?} x {:?}", va.shape(), vb.shape()),
            });
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut data = vec![0.0; m * n];
        kernels::mm(va.data(), vb.data(), m, k, n, &mut data);
        let t = Tensor::from_raw(vec![m, n], data).check_finite("matmul")?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(OpKind::MatMul, vec![a, b], t, vec![], ng))
    }

    /// y = x * weight + bias with the bias broadcast over the batch rows.
    pub fn affine(&mut self, x: VarId, weight: VarId, bias: VarId) -> Result<VarId> {
        let (vx, vw, vb) = (self.value(x), self.value(weight), self.value(bias));
        let ok = vx.rank() == 2
            && vw.rank() == 2
            && vb.rank() == 1
            && vx.shape()[1] == vw.shape()[0]
            && vw.shape()[1] == vb.shape()[0];
        if !ok {
            return Err(AdError::Dimension {
                op: "affine",
                detail: format!("x {:?}, weight {:?}, bias {:?}", vx.shape(), vw.shape(), vb.shape()),
            });
        }
        let (m, k, n) = (vx.shape()[0], vx.shape()[1], vw.shape()[1]);
        let mut data = vec![0.0; m * n];
        kernels::mm(vx.data(), vw.data(), m, k, n, &mut data);
        for r in 0..m {
            for (o, &bv) in data[r * n..(r + 1) * n].iter_mut().zip(vb.data()) {
                *o += bv;
            }
        }
        let t = Tensor::from_raw(vec![m, n], data).check_finite("affine")?;
        let ng = self.any_grad(&[x, weight, bias]);
        Ok(self.push(OpKind::Affine, vec![x, weight, bias], t, vec![], ng))
    }

    /// Valid cross-correlation with zero padding.
    /// x: \[batch, cin, h, w\], kernel: \[cout, cin, kh, kw\].
    pub fn conv2d(
        &mut self,
        x: VarId,
        kernel: VarId,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<VarId> {
        let (vx, vk) = (self.value(x), self.value(kernel));
        if vx.rank() != 4 || vk.rank() != 4 || vx.shape()[1] != vk.shape()[1] {
            return Err(AdError::Dimension {
                op: "conv2d",
                detail: format!("x {:?}, kernel {:?}", vx.shape(), vk.shape()),
            });
        }
        let (b, cin, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let (cout, kh, kw) = (vk.shape()[0], vk.shape()[2], vk.shape()[3]);
        let (sh, sw) = stride;
        let (ph, pw) = padding;
        if sh == 0 || sw == 0 {
            return Err(AdError::Usage("conv2d stride must be >= 1".into()));
        }
        let oh = kernels::conv_out_len(h, kh, sh, ph).ok_or(AdError::Dimension {
            op: "conv2d",
            detail: format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {ph},{pw})"),
        })?;
        let ow = kernels::conv_out_len(w, kw, sw, pw).ok_or(AdError::Dimension {
            op: "conv2d",
            detail: format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {ph},{pw})"),
        })?;

        let patch = cin * kh * kw;
        let rows = oh * ow;
        let mut cols = vec![0.0; b * rows * patch];
        for i in 0..b {
            kernels::im2col(
                &vx.data()[i * cin * h * w..(i + 1) * cin * h * w],
                cin,
                h,
                w,
                kh,
                kw,
                sh,
                sw,
                ph,
                pw,
                &mut cols[i * rows * patch..(i + 1) * rows * patch],
            );
        }
        // [b*rows, patch] x [cout, patch]^T -> [b*rows, cout]
        let mut prod = vec![0.0; b * rows * cout];
        kernels::mm_nt(&cols, vk.data(), b * rows, patch, cout, &mut prod);
        let mut data = vec![0.0; b * cout * rows];
        for i in 0..b {
            kernels::transpose(
                &prod[i * rows * cout..(i + 1) * rows * cout],
                rows,
                cout,
                &mut data[i * cout * rows..(i + 1) * cout * rows],
            );
        }
        let t = Tensor::from_raw(vec![b, cout, oh, ow], data).check_finite("conv2d")?;
        let ng = self.any_grad(&[x, kernel]);
        let saved = if ng {
            vec![Tensor::from_raw(vec![b * rows, patch], cols)]
        } else {
            vec![]
        };
        Ok(self.push(OpKind::Conv2d { stride, padding }, vec![x, kernel], t, saved, ng))
    }

    /// Adjoint of [`Tape::conv2d`] for a fixed kernel.
    /// x: \[batch, cin, h, w\], kernel: \[cin, cout, kh, kw\]; `out_hw` selects
    /// the target spatial size among the valid preimages (conv2d of the output
    /// with the same geometry must reproduce `x`'s spatial dims).
    pub fn conv_transpose2d(
        &mut self,
        x: VarId,
        kernel: VarId,
        stride: (usize, usize),
        padding: (usize, usize),
        out_hw: (usize, usize),
    ) -> Result<VarId> {
        let (vx, vk) = (self.value(x), self.value(kernel));
        if vx.rank() != 4 || vk.rank() != 4 || vx.shape()[1] != vk.shape()[0] {
            return Err(AdError::Dimension {
                op: "conv_transpose2d",
                detail: format!("x {:?}, kernel {:?}", vx.shape(), vk.shape()),
            });
        }
        let (b, cin, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let (cout, kh, kw) = (vk.shape()[1], vk.shape()[2], vk.shape()[3]);
        let (sh, sw) = stride;
        let (ph, pw) = padding;
        let (out_h, out_w) = out_hw;
        if kernels::conv_out_len(out_h, kh, sh, ph) != Some(h)
            || kernels::conv_out_len(out_w, kw, sw, pw) != Some(w)
        {
            return Err(AdError::Dimension {
                op: "conv_transpose2d",
                detail: format!(
                    "output {out_h}x{out_w} does not conv down to input {h}x{w} \
                     with kernel {kh}x{kw}, stride {sh},{sw}, pad {ph},{pw}"
                ),
            });
        }

        let patch = cout * kh * kw;
        let rows = h * w;
        // Per image: x [cin, h*w] -> rows [h*w, cin]; cols = rows * K_flat [cin, patch].
        let mut xrows = vec![0.0; b * rows * cin];
        for i in 0..b {
            kernels::transpose(
                &vx.data()[i * cin * rows..(i + 1) * cin * rows],
                cin,
                rows,
                &mut xrows[i * rows * cin..(i + 1) * rows * cin],
            );
        }
        let mut cols = vec![0.0; b * rows * patch];
        kernels::mm(&xrows, vk.data(), b * rows, cin, patch, &mut cols);
        let mut data = vec![0.0; b * cout * out_h * out_w];
        for i in 0..b {
            kernels::col2im(
                &cols[i * rows * patch..(i + 1) * rows * patch],
                cout,
                out_h,
                out_w,
                kh,
                kw,
                sh,
                sw,
                ph,
                pw,
                &mut data[i * cout * out_h * out_w..(i + 1) * cout * out_h * out_w],
            );
        }
        let t =
            Tensor::from_raw(vec![b, cout, out_h, out_w], data).check_finite("conv_transpose2d")?;
        let ng = self.any_grad(&[x, kernel]);
        let saved = if ng {
            vec![Tensor::from_raw(vec![b * rows, cin], xrows)]
        } else {
            vec![]
        };
        Ok(self.push(OpKind::ConvTranspose2d { stride, padding }, vec![x, kernel], t, saved, ng))
    }

    /// Per-channel bias add on a \[batch, c, h, w\] tensor.
    pub fn conv_bias(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vx.rank() != 4 || vb.rank() != 1 || vb.shape()[0] != vx.shape()[1] {
            return Err(AdError::Dimension {
                op: "conv_bias",
                detail: format!("x {:?}, bias {:?}", vx.shape(), vb.shape()),
            });
        }
        let (b, c, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let hw = h * w;
        let mut data = vx.data().to_vec();
        for i in 0..b {
            for ch in 0..c {
                let bv = vb.data()[ch];
                for v in &mut data[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                    *v += bv;
                }
            }
        }
        let t = Tensor::from_raw(vx.shape().to_vec(), data).check_finite("conv_bias")?;
        let ng = self.any_grad(&[x, bias]);
        Ok(self.push(OpKind::ConvBias, vec![x, bias], t, vec![], ng))
    }

    /// ln det(sym(M) + jitter*I) via Cholesky; sym(M) = (M + M^T)/2.
    /// The backward pass uses the saved inverse of the jittered matrix.
    pub fn logdet_spd(&mut self, m: VarId, jitter: f64) -> Result<VarId> {
        let vm = self.value(m);
        if vm.rank() != 2 || vm.shape()[0] != vm.shape()[1] {
            return Err(AdError::Dimension {
                op: "logdet_spd",
                detail: format!("square matrix required, got {:?}", vm.shape()),
            });
        }
        let n = vm.shape()[0];
        if n > 8 {
            return Err(AdError::Usage(format!("logdet_spd supports n <= 8, got {n}")));
        }
        let mut sym = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                sym[i * n + j] = 0.5 * (vm.data()[i * n + j] + vm.data()[j * n + i]);
            }
            sym[i * n + i] += jitter;
        }
        let mut l = vec![0.0; n * n];
        if let Err(pivot) = kernels::cholesky(&sym, n, &mut l) {
            return Err(AdError::CholeskyFailed {
                pivot,
                matrix: Tensor::from_raw(vec![n, n], sym),
            });
        }
        let value = kernels::logdet_from_cholesky(&l, n);
        let t = Tensor::from_raw(vec![], vec![value]).check_finite("logdet_spd")?;
        let ng = self.any_grad(&[m]);
        let saved = if ng {
            let mut inv = vec![0.0; n * n];
            kernels::spd_inverse_from_cholesky(&l, n, &mut inv);
            vec![Tensor::from_raw(vec![n, n], inv)]
        } else {
            vec![]
        };
        Ok(self.push(OpKind::LogDetSpd, vec![m], t, saved, ng))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Returns per-node gradients; query
    /// leaves through [`Gradients::get`] or [`Gradients::get_or_zeros`].
    pub fn backward(&self, loss: VarId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(AdError::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::from_raw(self.value(loss).shape().to_vec(), vec![1.0]));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                slots[id] = None;
                continue;
            }
            let Some(g) = slots[id].take() else { continue };
            self.backprop_node(id, &g, &mut slots)?;
            slots[id] = Some(g);
        }
        Ok(Gradients { slots })
    }

    fn grad_slot<'a>(
        &self,
        slots: &'a mut [Option<Tensor>],
        id: VarId,
    ) -> Option<&'a mut Tensor> {
        if !self.nodes[id.0].needs_grad {
            return None;
        }
        let slot = &mut slots[id.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(id).shape()));
        }
        slot.as_mut()
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&self, id: usize, g: &Tensor, slots: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            OpKind::Leaf => {}
            OpKind::Add => {
                for &inp in &node.inputs {
                    if let Some(dst) = self.grad_slot(slots, inp) {
                        for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                            *d += gv;
                        }
                    }
                }
            }
            OpKind::Sub => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if let Some(dst) = self.grad_slot(slots, a) {
                    for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                }
                if let Some(dst) = self.grad_slot(slots, b) {
                    for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d -= gv;
                    }
                }
            }
            OpKind::Mul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let (va, vb) = (self.value(a).data().to_vec(), self.value(b).data().to_vec());
                if let Some(dst) = self.grad_slot(slots, a) {
                    for ((d, &gv), &bv) in dst.data_mut().iter_mut().zip(g.data()).zip(&vb) {
                        *d += gv * bv;
                    }
                }
                if let Some(dst) = self.grad_slot(slots, b) {
                    for ((d, &gv), &av) in dst.data_mut().iter_mut().zip(g.data()).zip(&va) {
                        *d += gv * av;
                    }
                }
            }
            OpKind::Neg => {
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d -= gv;
                    }
                }
            }
            OpKind::Scale(c) => {
                let c = *c;
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d += gv * c;
                    }
                }
            }
            OpKind::AddScalar => {
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                }
            }
            OpKind::Relu => {
                let x = self.value(node.inputs[0]).data().to_vec();
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    kernels::relu_backward(&x, g.data(), dst.data_mut());
                }
            }
            OpKind::Sigmoid => {
                let y = node.value.data().to_vec();
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    kernels::sigmoid_backward(&y, g.data(), dst.data_mut());
                }
            }
            OpKind::Ln => {
                let x = self.value(node.inputs[0]).data().to_vec();
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    for ((d, &gv), &xv) in dst.data_mut().iter_mut().zip(g.data()).zip(&x) {
                        *d += gv / xv;
                    }
                }
            }
            OpKind::Exp => {
                let y = node.value.data().to_vec();
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    for ((d, &gv), &yv) in dst.data_mut().iter_mut().zip(g.data()).zip(&y) {
                        *d += gv * yv;
                    }
                }
            }
            OpKind::Sum => {
                let gv = g.data()[0];
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    for d in dst.data_mut() {
                        *d += gv;
                    }
                }
            }
            OpKind::Mean => {
                let n = self.value(node.inputs[0]).len() as f64;
                let gv = g.data()[0] / n;
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    for d in dst.data_mut() {
                        *d += gv;
                    }
                }
            }
            OpKind::Reshape => {
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                }
            }
            OpKind::Narrow { dim, start } => {
                let (dim, start) = (*dim, *start);
                let (gr, gc) = (g.shape()[0], g.shape()[1]);
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    let cols = dst.shape()[1];
                    let data = dst.data_mut();
                    if dim == 0 {
                        for (d, &gv) in
                            data[start * cols..start * cols + gr * gc].iter_mut().zip(g.data())
                        {
                            *d += gv;
                        }
                    } else {
                        for r in 0..gr {
                            for c in 0..gc {
                                data[r * cols + start + c] += g.data()[r * gc + c];
                            }
                        }
                    }
                }
            }
            OpKind::ConcatRows => {
                let mut row = 0;
                let cols = node.value.shape()[1];
                for &inp in &node.inputs {
                    let r = self.value(inp).shape()[0];
                    if let Some(dst) = self.grad_slot(slots, inp) {
                        for (d, &gv) in dst
                            .data_mut()
                            .iter_mut()
                            .zip(&g.data()[row * cols..(row + r) * cols])
                        {
                            *d += gv;
                        }
                    }
                    row += r;
                }
            }
            OpKind::ConcatCols => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &inp in &node.inputs {
                    let w = self.value(inp).shape()[1];
                    if let Some(dst) = self.grad_slot(slots, inp) {
                        let data = dst.data_mut();
                        for r in 0..rows {
                            for c in 0..w {
                                data[r * w + c] += g.data()[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            OpKind::Transpose => {
                let (gr, gc) = (g.shape()[0], g.shape()[1]);
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    let data = dst.data_mut();
                    for i in 0..gr {
                        for j in 0..gc {
                            data[j * gr + i] += g.data()[i * gc + j];
                        }
                    }
                }
            }
            OpKind::MatMul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let (va, vb) = (self.value(a), self.value(b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; m * k];
                    kernels::mm_nt(g.data(), vb.data(), m, n, k, &mut da);
                    let dst = self.grad_slot(slots, a).unwrap();
                    for (d, &v) in dst.data_mut().iter_mut().zip(&da) {
                        *d += v;
                    }
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; k * n];
                    kernels::mm_tn(va.data(), g.data(), m, k, n, &mut db);
                    let dst = self.grad_slot(slots, b).unwrap();
                    for (d, &v) in dst.data_mut().iter_mut().zip(&db) {
                        *d += v;
                    }
                }
            }
            OpKind::Affine => {
                let (x, wgt, bias) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let (vx, vw) = (self.value(x), self.value(wgt));
                let (m, k, n) = (vx.shape()[0], vx.shape()[1], vw.shape()[1]);
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![0.0; m * k];
                    kernels::mm_nt(g.data(), vw.data(), m, n, k, &mut dx);
                    let dst = self.grad_slot(slots, x).unwrap();
                    for (d, &v) in dst.data_mut().iter_mut().zip(&dx) {
                        *d += v;
                    }
                }
                if self.nodes[wgt.0].needs_grad {
                    let mut dw = vec![0.0; k * n];
                    kernels::mm_tn(vx.data(), g.data(), m, k, n, &mut dw);
                    let dst = self.grad_slot(slots, wgt).unwrap();
                    for (d, &v) in dst.data_mut().iter_mut().zip(&dw) {
                        *d += v;
                    }
                }
                if self.nodes[bias.0].needs_grad {
                    let dst = self.grad_slot(slots, bias).unwrap();
                    let data = dst.data_mut();
                    for r in 0..m {
                        for (d, &gv) in data.iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                            *d += gv;
                        }
                    }
                }
            }
            OpKind::Conv2d { stride, padding } => {
                self.backprop_conv2d(node, g, slots, *stride, *padding);
            }
            OpKind::ConvTranspose2d { stride, padding } => {
                self.backprop_conv_transpose2d(node, g, slots, *stride, *padding);
            }
            OpKind::ConvBias => {
                let (x, bias) = (node.inputs[0], node.inputs[1]);
                let (b, c, h, w) = {
                    let s = self.value(x).shape();
                    (s[0], s[1], s[2], s[3])
                };
                if let Some(dst) = self.grad_slot(slots, x) {
                    for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                }
                if let Some(dst) = self.grad_slot(slots, bias) {
                    let data = dst.data_mut();
                    for i in 0..b {
                        for ch in 0..c {
                            let s: f64 =
                                g.data()[(i * c + ch) * h * w..(i * c + ch + 1) * h * w].iter().sum();
                            data[ch] += s;
                        }
                    }
                }
            }
            OpKind::LogDetSpd => {
                let gv = g.data()[0];
                let inv = node.saved[0].clone();
                if let Some(dst) = self.grad_slot(slots, node.inputs[0]) {
                    for (d, &iv) in dst.data_mut().iter_mut().zip(inv.data()) {
                        *d += gv * iv;
                    }
                }
            }
        }
        Ok(())
    }

    fn backprop_conv2d(
        &self,
        node: &TapeNode,
        g: &Tensor,
        slots: &mut [Option<Tensor>],
        stride: (usize, usize),
        padding: (usize, usize),
    ) {
        let (x, kernel) = (node.inputs[0], node.inputs[1]);
        let (vx, vk) = (self.value(x), self.value(kernel));
        let (b, cin, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let (cout, kh, kw) = (vk.shape()[0], vk.shape()[2], vk.shape()[3]);
        let (oh, ow) = (g.shape()[2], g.shape()[3]);
        let rows = oh * ow;
        let patch = cin * kh * kw;
        let cols = &node.saved[0];

        // dOut back to row-major patches: [b*rows, cout]
        let mut drows = vec![0.0; b * rows * cout];
        for i in 0..b {
            kernels::transpose(
                &g.data()[i * cout * rows..(i + 1) * cout * rows],
                cout,
                rows,
                &mut drows[i * rows * cout..(i + 1) * rows * cout],
            );
        }
        if self.nodes[kernel.0].needs_grad {
            let mut dk = vec![0.0; cout * patch];
            kernels::mm_tn(&drows, cols.data(), b * rows, cout, patch, &mut dk);
            let dst = self.grad_slot(slots, kernel).unwrap();
            for (d, &v) in dst.data_mut().iter_mut().zip(&dk) {
                *d += v;
            }
        }
        if self.nodes[x.0].needs_grad {
            let mut dcols = vec![0.0; b * rows * patch];
            kernels::mm(&drows, vk.data(), b * rows, cout, patch, &mut dcols);
            let mut dx_img = vec![0.0; cin * h * w];
            let dst = self.grad_slot(slots, x).unwrap();
            let data = dst.data_mut();
            for i in 0..b {
                kernels::col2im(
                    &dcols[i * rows * patch..(i + 1) * rows * patch],
                    cin,
                    h,
                    w,
                    kh,
                    kw,
                    stride.0,
                    stride.1,
                    padding.0,
                    padding.1,
                    &mut dx_img,
                );
                for (d, &v) in data[i * cin * h * w..(i + 1) * cin * h * w].iter_mut().zip(&dx_img)
                {
                    *d += v;
                }
            }
        }
    }

    fn backprop_conv_transpose2d(
        &self,
        node: &TapeNode,
        g: &Tensor,
        slots: &mut [Option<Tensor>],
        stride: (usize, usize),
        padding: (usize, usize),
    ) {
        let (x, kernel) = (node.inputs[0], node.inputs[1]);
        let (vx, vk) = (self.value(x), self.value(kernel));
        let (b, cin, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let (cout, kh, kw) = (vk.shape()[1], vk.shape()[2], vk.shape()[3]);
        let (out_h, out_w) = (g.shape()[2], g.shape()[3]);
        let rows = h * w;
        let patch = cout * kh * kw;
        let xrows = &node.saved[0];

        // dCols = im2col(dOut) per image: [b*rows, patch]
        let mut dcols = vec![0.0; b * rows * patch];
        for i in 0..b {
            kernels::im2col(
                &g.data()[i * cout * out_h * out_w..(i + 1) * cout * out_h * out_w],
                cout,
                out_h,
                out_w,
                kh,
                kw,
                stride.0,
                stride.1,
                padding.0,
                padding.1,
                &mut dcols[i * rows * patch..(i + 1) * rows * patch],
            );
        }
        if self.nodes[kernel.0].needs_grad {
            let mut dk = vec![0.0; cin * patch];
            kernels::mm_tn(xrows.data(), &dcols, b * rows, cin, patch, &mut dk);
            let dst = self.grad_slot(slots, kernel).unwrap();
            for (d, &v) in dst.data_mut().iter_mut().zip(&dk) {
                *d += v;
            }
        }
        if self.nodes[x.0].needs_grad {
            let mut dxrows = vec![0.0; b * rows * cin];
            kernels::mm_nt(&dcols, vk.data(), b * rows, patch, cin, &mut dxrows);
            let dst = self.grad_slot(slots, x).unwrap();
            let data = dst.data_mut();
            for i in 0..b {
                // rows [h*w, cin] back to [cin, h*w]
                for r in 0..rows {
                    for c in 0..cin {
                        data[i * cin * rows + c * rows + r] += dxrows[(i * rows + r) * cin + c];
                    }
                }
            }
        }
    }
}
