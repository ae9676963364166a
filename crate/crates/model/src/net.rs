//! Encoder h, decoder g and locally-linear transition f, built on the tape.
//!
//! The transition network maps z to the packed matrices (A, B, offset) and
//! the next latent state is assembled as z' = A z + B a + offset from those
//! same tape values, so the linearization handed to the constraint is exactly
//! the one that produced the prediction.

use cgram_autodiff::{
    AdError, ParameterStore, Result, Tape, TapeParams, Tensor, VarId,
};
use cgram_envs::ObservationPair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::config::ModelConfig;

/// Encoder output on a tape: per-sample mean and log-variance rows.
#[derive(Debug, Clone, Copy)]
pub struct LatentGaussianVars {
    pub mean: VarId,
    pub log_var: VarId,
}

/// One sample's transition matrices on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LinVars {
    pub a: VarId,
    pub b: VarId,
    pub offset: VarId,
}

/// Plain-value local linearization.
#[derive(Debug, Clone)]
pub struct LocalLinearization {
    pub a: Tensor,
    pub b: Tensor,
    pub offset: Vec<f64>,
}

pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterStore,
}

impl Model {
    /// Fresh model with uniform fan-in initialization; the transition head
    /// bias starts at A = I so the latent dynamics begin near the identity.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();

        let mut uniform = |shape: &[usize], fan_in: usize| -> Tensor {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::new(shape.to_vec(), data).expect("finite init")
        };

        // encoder
        let mut cin = 2;
        for (i, conv) in config.enc_convs.iter().enumerate() {
            let fan_in = cin * conv.kernel * conv.kernel;
            params.insert(
                &format!("enc.conv{i}.w"),
                uniform(&[conv.out_channels, cin, conv.kernel, conv.kernel], fan_in),
            )?;
            params.insert(&format!("enc.conv{i}.b"), Tensor::zeros(&[conv.out_channels]))?;
            cin = conv.out_channels;
        }
        let flat = config.encoder_flat_dim();
        params.insert("enc.fc.w", uniform(&[flat, config.enc_fc], flat))?;
        params.insert("enc.fc.b", Tensor::zeros(&[config.enc_fc]))?;
        params.insert(
            "enc.head.w",
            uniform(&[config.enc_fc, 2 * config.n_z], config.enc_fc),
        )?;
        params.insert("enc.head.b", Tensor::zeros(&[2 * config.n_z]))?;

        // decoder
        let mut dec_in = config.n_z;
        for (i, &width) in config.dec_fc.iter().enumerate() {
            params.insert(&format!("dec.fc{i}.w"), uniform(&[dec_in, width], dec_in))?;
            params.insert(&format!("dec.fc{i}.b"), Tensor::zeros(&[width]))?;
            dec_in = width;
        }
        let mut dcin = config.dec_bottleneck.0;
        for (i, d) in config.dec_deconvs.iter().enumerate() {
            let fan_in = dcin * d.kernel * d.kernel;
            params.insert(
                &format!("dec.deconv{i}.w"),
                uniform(&[dcin, d.out_channels, d.kernel, d.kernel], fan_in),
            )?;
            params.insert(&format!("dec.deconv{i}.b"), Tensor::zeros(&[d.out_channels]))?;
            dcin = d.out_channels;
        }

        // transition
        let mut tin = config.n_z;
        for (i, &width) in config.trans_hidden.iter().enumerate() {
            params.insert(&format!("trans.fc{i}.w"), uniform(&[tin, width], tin))?;
            params.insert(&format!("trans.fc{i}.b"), Tensor::zeros(&[width]))?;
            tin = width;
        }
        let out_width = config.transition_out_width();
        params.insert("trans.head.w", uniform(&[tin, out_width], tin))?;
        let mut head_bias = vec![0.0; out_width];
        for i in 0..config.n_z {
            head_bias[i * config.n_z + i] = 1.0;
        }
        params.insert("trans.head.b", Tensor::new(vec![out_width], head_bias)?)?;

        Ok(Model { config, params })
    }

    /// Rebuild a model from deserialized parts, verifying parameter shapes.
    pub fn from_parts(config: ModelConfig, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        let reference = Model::new(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(AdError::Usage(format!(
                "parameter count mismatch: expected {}, got {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (name, tensor) in reference.params.iter() {
            let loaded = params.get(name)?;
            if loaded.shape() != tensor.shape() {
                return Err(AdError::Dimension {
                    op: "Model::from_parts",
                    detail: format!(
                        "{name}: expected {:?}, got {:?}",
                        tensor.shape(),
                        loaded.shape()
                    ),
                });
            }
        }
        Ok(Model { config, params })
    }

    /// Encoder forward pass on the tape: x \[B, 2, h, w\] -> Gaussian head.
    pub fn encode_traced(
        &self,
        tape: &mut Tape,
        reg: &TapeParams,
        x: VarId,
    ) -> Result<LatentGaussianVars> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 4
            || shape[1] != 2
            || shape[2] != self.config.frame_h
            || shape[3] != self.config.frame_w
        {
            return Err(AdError::Dimension {
                op: "encode",
                detail: format!(
                    "expected [_, 2, {}, {}], got {:?}",
                    self.config.frame_h, self.config.frame_w, shape
                ),
            });
        }
        let batch = shape[0];
        let mut h = x;
        for (i, conv) in self.config.enc_convs.iter().enumerate() {
            let w = reg.id(&format!("enc.conv{i}.w"))?;
            let b = reg.id(&format!("enc.conv{i}.b"))?;
            let p = conv.kernel / 2;
            h = tape.conv2d(h, w, (conv.stride, conv.stride), (p, p))?;
            h = tape.conv_bias(h, b)?;
            h = tape.relu(h)?;
        }
        let flat = self.config.encoder_flat_dim();
        h = tape.reshape(h, &[batch, flat])?;
        h = tape.affine(h, reg.id("enc.fc.w")?, reg.id("enc.fc.b")?)?;
        h = tape.relu(h)?;
        let head = tape.affine(h, reg.id("enc.head.w")?, reg.id("enc.head.b")?)?;
        let mean = tape.narrow(head, 1, 0, self.config.n_z)?;
        let log_var = tape.narrow(head, 1, self.config.n_z, self.config.n_z)?;
        Ok(LatentGaussianVars { mean, log_var })
    }

    /// Decoder forward pass: z \[B, n_z\] -> frames \[B, 2, h, w\] in (0,1).
    pub fn decode_traced(&self, tape: &mut Tape, reg: &TapeParams, z: VarId) -> Result<VarId> {
        let shape = tape.value(z).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.config.n_z {
            return Err(AdError::Dimension {
                op: "decode",
                detail: format!("expected [_, {}], got {:?}", self.config.n_z, shape),
            });
        }
        let batch = shape[0];
        let mut h = z;
        for i in 0..self.config.dec_fc.len() {
            h = tape.affine(h, reg.id(&format!("dec.fc{i}.w"))?, reg.id(&format!("dec.fc{i}.b"))?)?;
            h = tape.relu(h)?;
        }
        let (c, bh, bw) = self.config.dec_bottleneck;
        h = tape.reshape(h, &[batch, c, bh, bw])?;
        let last = self.config.dec_deconvs.len() - 1;
        for (i, d) in self.config.dec_deconvs.iter().enumerate() {
            let w = reg.id(&format!("dec.deconv{i}.w"))?;
            let b = reg.id(&format!("dec.deconv{i}.b"))?;
            let p = d.kernel / 2;
            h = tape.conv_transpose2d(h, w, (d.stride, d.stride), (p, p), d.out_hw)?;
            h = tape.conv_bias(h, b)?;
            h = if i == last { tape.sigmoid(h)? } else { tape.relu(h)? };
        }
        Ok(h)
    }

    /// Transition forward pass: z \[B, n_z\], a \[B, n_a\] ->
    /// (z_next \[B, n_z\], per-sample linearizations).
    pub fn transition_traced(
        &self,
        tape: &mut Tape,
        reg: &TapeParams,
        z: VarId,
        action: VarId,
    ) -> Result<(VarId, Vec<LinVars>)> {
        let (n_z, n_a) = (self.config.n_z, self.config.n_a);
        let zshape = tape.value(z).shape().to_vec();
        if zshape.len() != 2 || zshape[1] != n_z {
            return Err(AdError::Dimension {
                op: "transition",
                detail: format!("expected z [_, {n_z}], got {zshape:?}"),
            });
        }
        let batch = zshape[0];
        let mut h = z;
        for i in 0..self.config.trans_hidden.len() {
            h = tape.affine(
                h,
                reg.id(&format!("trans.fc{i}.w"))?,
                reg.id(&format!("trans.fc{i}.b"))?,
            )?;
            h = tape.relu(h)?;
        }
        let out = tape.affine(h, reg.id("trans.head.w")?, reg.id("trans.head.b")?)?;

        let mut rows = Vec::with_capacity(batch);
        let mut lins = Vec::with_capacity(batch);
        for i in 0..batch {
            let row = tape.narrow(out, 0, i, 1)?;
            let a_flat = tape.narrow(row, 1, 0, n_z * n_z)?;
            let a_mat = tape.reshape(a_flat, &[n_z, n_z])?;
            let b_flat = tape.narrow(row, 1, n_z * n_z, n_z * n_a)?;
            let b_mat = tape.reshape(b_flat, &[n_z, n_a])?;
            let off_row = tape.narrow(row, 1, n_z * n_z + n_z * n_a, n_z)?;
            let off_col = tape.reshape(off_row, &[n_z, 1])?;

            let z_row = tape.narrow(z, 0, i, 1)?;
            let z_col = tape.reshape(z_row, &[n_z, 1])?;
            let act_row = tape.narrow(action, 0, i, 1)?;
            let act_col = tape.reshape(act_row, &[n_a, 1])?;

            let az = tape.matmul(a_mat, z_col)?;
            let ba = tape.matmul(b_mat, act_col)?;
            let sum = tape.add(az, ba)?;
            let zn = tape.add(sum, off_col)?;
            rows.push(tape.reshape(zn, &[1, n_z])?);
            lins.push(LinVars { a: a_mat, b: b_mat, offset: off_row });
        }
        let z_next = tape.concat_rows(&rows)?;
        Ok((z_next, lins))
    }

    /// z = mean + exp(0.5 * log_var) * noise.
    pub fn reparameterize(
        tape: &mut Tape,
        gaussian: &LatentGaussianVars,
        noise: VarId,
    ) -> Result<VarId> {
        let half_log_var = tape.scale(gaussian.log_var, 0.5)?;
        let std = tape.exp(half_log_var)?;
        let scaled = tape.mul(std, noise)?;
        tape.add(gaussian.mean, scaled)
    }

    // ---- evaluation paths (no gradients) ----

    /// Encoder means and log-variances for a batch of observations.
    pub fn encode_eval(&self, obs: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let reg = self.params.register(&mut tape);
        let x = tape.constant(obs.clone());
        let g = self.encode_traced(&mut tape, &reg, x)?;
        Ok((tape.value(g.mean).clone(), tape.value(g.log_var).clone()))
    }

    /// Latent mean of a single observation pair.
    pub fn encode_pair_mean(&self, o: &ObservationPair) -> Result<Vec<f64>> {
        let x = Tensor::new(
            vec![1, 2, o.height(), o.width()],
            o.to_channels(),
        )?;
        let (mean, _) = self.encode_eval(&x)?;
        Ok(mean.data().to_vec())
    }

    /// Decoded frames for a batch of latent states.
    pub fn decode_eval(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let reg = self.params.register(&mut tape);
        let zi = tape.constant(z.clone());
        let out = self.decode_traced(&mut tape, &reg, zi)?;
        Ok(tape.value(out).clone())
    }

    /// Kernel-level transition evaluator for planning loops.
    pub fn transition_eval(&self) -> Result<TransitionEval<'_>> {
        let mut layers = Vec::new();
        for i in 0..self.config.trans_hidden.len() {
            layers.push((
                self.params.get(&format!("trans.fc{i}.w"))?,
                self.params.get(&format!("trans.fc{i}.b"))?,
            ));
        }
        let head =
            (self.params.get("trans.head.w")?, self.params.get("trans.head.b")?);
        Ok(TransitionEval { n_z: self.config.n_z, n_a: self.config.n_a, layers, head })
    }
}

/// Fast untraced transition: the same kernel calls as the traced path, so
/// both produce bit-identical values.
pub struct TransitionEval<'m> {
    n_z: usize,
    n_a: usize,
    layers: Vec<(&'m Tensor, &'m Tensor)>,
    head: (&'m Tensor, &'m Tensor),
}

impl TransitionEval<'_> {
    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    fn affine(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
        let (k, n) = (w.shape()[0], w.shape()[1]);
        let mut out = vec![0.0; rows * n];
        cgram_autodiff::kernels::mm(x, w.data(), rows, k, n, &mut out);
        for r in 0..rows {
            for (o, &bv) in out[r * n..(r + 1) * n].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        out
    }

    /// Network outputs (packed A, B, offset rows) for a batch of latents.
    fn forward(&self, z: &[f64], rows: usize) -> Vec<f64> {
        let mut h = z.to_vec();
        for (w, b) in &self.layers {
            let pre = Self::affine(&h, rows, w, b);
            let mut post = vec![0.0; pre.len()];
            cgram_autodiff::kernels::relu(&pre, &mut post);
            h = post;
        }
        Self::affine(&h, rows, self.head.0, self.head.1)
    }

    /// Advance a batch of latent states: z \[K, n_z\], a \[K, n_a\].
    pub fn step_batch(&self, z: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let k = z.shape()[0];
        if z.shape() != [k, self.n_z] || actions.shape() != [k, self.n_a] {
            return Err(AdError::Dimension {
                op: "transition_eval",
                detail: format!("z {:?}, a {:?}", z.shape(), actions.shape()),
            });
        }
        let out = self.forward(z.data(), k);
        let width = self.n_z * self.n_z + self.n_z * self.n_a + self.n_z;
        let mut next = vec![0.0; k * self.n_z];
        let mut az = vec![0.0; self.n_z];
        let mut ba = vec![0.0; self.n_z];
        for i in 0..k {
            let row = &out[i * width..(i + 1) * width];
            let a_mat = &row[..self.n_z * self.n_z];
            let b_mat = &row[self.n_z * self.n_z..self.n_z * self.n_z + self.n_z * self.n_a];
            let off = &row[self.n_z * self.n_z + self.n_z * self.n_a..];
            let z_col = &z.data()[i * self.n_z..(i + 1) * self.n_z];
            let a_col = &actions.data()[i * self.n_a..(i + 1) * self.n_a];
            cgram_autodiff::kernels::mm(a_mat, z_col, self.n_z, self.n_z, 1, &mut az);
            cgram_autodiff::kernels::mm(b_mat, a_col, self.n_z, self.n_a, 1, &mut ba);
            for j in 0..self.n_z {
                next[i * self.n_z + j] = (az[j] + ba[j]) + off[j];
            }
        }
        Tensor::new(vec![k, self.n_z], next)
    }

    /// Single-state convenience wrapper returning the linearization too.
    pub fn step(&self, z: &[f64], action: &[f64]) -> Result<(Vec<f64>, LocalLinearization)> {
        let zt = Tensor::new(vec![1, self.n_z], z.to_vec())?;
        let at = Tensor::new(vec![1, self.n_a], action.to_vec())?;
        let next = self.step_batch(&zt, &at)?;
        let lin = self.linearize(z)?;
        Ok((next.data().to_vec(), lin))
    }

    /// Linearization (A, B, offset) at a single latent state.
    pub fn linearize(&self, z: &[f64]) -> Result<LocalLinearization> {
        let out = self.forward(z, 1);
        let a = Tensor::new(vec![self.n_z, self.n_z], out[..self.n_z * self.n_z].to_vec())?;
        let b = Tensor::new(
            vec![self.n_z, self.n_a],
            out[self.n_z * self.n_z..self.n_z * self.n_z + self.n_z * self.n_a].to_vec(),
        )?;
        let offset = out[self.n_z * self.n_z + self.n_z * self.n_a..].to_vec();
        Ok(LocalLinearization { a, b, offset })
    }
}
