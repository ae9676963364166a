//! Model architecture and training hyperparameters.

use cgram_autodiff::{AdError, Result};
use cgram_envs::EnvId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeconvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_hw: (usize, usize),
}

/// Everything needed to build the encoder, decoder and transition networks
/// for one environment, plus the objective weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub env: EnvId,
    pub n_z: usize,
    pub n_a: usize,
    pub frame_h: usize,
    pub frame_w: usize,
    pub enc_convs: Vec<ConvSpec>,
    /// fully-connected width between the conv stack and the Gaussian head
    pub enc_fc: usize,
    /// fully-connected widths from the latent up to the decoder bottleneck
    pub dec_fc: Vec<usize>,
    /// bottleneck feature map the last fc layer reshapes into (c, h, w)
    pub dec_bottleneck: (usize, usize, usize),
    pub dec_deconvs: Vec<DeconvSpec>,
    pub trans_hidden: Vec<usize>,
    /// controllability trade-off weight (0 disables the constraint)
    pub beta: f64,
    pub kl_weight: f64,
    pub jitter: f64,
}

impl ModelConfig {
    /// Width of the transition network output: A, B and the offset packed
    /// row-major.
    pub fn transition_out_width(&self) -> usize {
        self.n_z * self.n_z + self.n_z * self.n_a + self.n_z
    }

    /// Flattened size after the encoder conv stack.
    pub fn encoder_flat_dim(&self) -> usize {
        let (c, h, w) = self.encoder_output_chw();
        c * h * w
    }

    /// (channels, h, w) after the last encoder convolution.
    pub fn encoder_output_chw(&self) -> (usize, usize, usize) {
        let (mut c, mut h, mut w) = (2usize, self.frame_h, self.frame_w);
        for conv in &self.enc_convs {
            let p = conv.kernel / 2;
            h = (h + 2 * p - conv.kernel) / conv.stride + 1;
            w = (w + 2 * p - conv.kernel) / conv.stride + 1;
            c = conv.out_channels;
        }
        (c, h, w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(AdError::Usage(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.kl_weight < 0.0 {
            return Err(AdError::Usage(format!(
                "kl_weight must be >= 0, got {}",
                self.kl_weight
            )));
        }
        let (c, h, w) = self.dec_bottleneck;
        let dec_last = *self.dec_fc.last().ok_or(AdError::Usage(
            "decoder needs at least one fully-connected layer".into(),
        ))?;
        if dec_last != c * h * w {
            return Err(AdError::Dimension {
                op: "ModelConfig::validate",
                detail: format!(
                    "decoder fc width {dec_last} does not match bottleneck {c}x{h}x{w}"
                ),
            });
        }
        let last_deconv = self.dec_deconvs.last().ok_or(AdError::Usage(
            "decoder needs at least one transposed convolution".into(),
        ))?;
        if last_deconv.out_channels != 2
            || last_deconv.out_hw != (self.frame_h, self.frame_w)
        {
            return Err(AdError::Dimension {
                op: "ModelConfig::validate",
                detail: format!(
                    "decoder must end in 2 channels at {}x{}, got {} at {:?}",
                    self.frame_h, self.frame_w, last_deconv.out_channels, last_deconv.out_hw
                ),
            });
        }
        // each deconv output must conv back down to its input size
        let (_, mut h, mut w) = self.dec_bottleneck;
        for d in &self.dec_deconvs {
            let p = d.kernel / 2;
            let back_h = (d.out_hw.0 + 2 * p - d.kernel) / d.stride + 1;
            let back_w = (d.out_hw.1 + 2 * p - d.kernel) / d.stride + 1;
            if back_h != h || back_w != w {
                return Err(AdError::Dimension {
                    op: "ModelConfig::validate",
                    detail: format!(
                        "deconv to {:?} does not invert a stride-{} conv from {h}x{w}",
                        d.out_hw, d.stride
                    ),
                });
            }
            h = d.out_hw.0;
            w = d.out_hw.1;
        }
        Ok(())
    }
}

/// Pendulum architecture:
/// encoder 2x48x48 -> conv 16x3x3/2 -> conv 32x3x3/2 -> fc 256 -> 4 units
/// (2 mean + 2 log-variance); decoder mirrors through 256 -> 4608 -> deconv
/// 16 -> deconv 2 -> sigmoid; transition 100-100-8.
pub fn pendulum_config() -> ModelConfig {
    ModelConfig {
        env: EnvId::Pendulum,
        n_z: 2,
        n_a: 1,
        frame_h: 48,
        frame_w: 48,
        enc_convs: vec![
            ConvSpec { out_channels: 16, kernel: 3, stride: 2 },
            ConvSpec { out_channels: 32, kernel: 3, stride: 2 },
        ],
        enc_fc: 256,
        dec_fc: vec![256, 32 * 12 * 12],
        dec_bottleneck: (32, 12, 12),
        dec_deconvs: vec![
            DeconvSpec { out_channels: 16, kernel: 3, stride: 2, out_hw: (24, 24) },
            DeconvSpec { out_channels: 2, kernel: 3, stride: 2, out_hw: (48, 48) },
        ],
        trans_hidden: vec![100, 100],
        beta: 0.0,
        kl_weight: 0.1,
        jitter: 1e-6,
    }
}

/// Cart-pole architecture:
/// encoder 2x80x80 -> conv 32x5x5/1 -> conv 32x5x5/2 -> conv 32x5x5/2 ->
/// conv 10x5x5/2 -> fc 200 -> 8 units (4 mean + 4 log-variance); decoder
/// 200 -> 1000 -> three upsampling deconvs 32x5x5 -> deconv 2x5x5 ->
/// sigmoid; transition 100-100-24.
pub fn cartpole_config() -> ModelConfig {
    ModelConfig {
        env: EnvId::CartPole,
        n_z: 4,
        n_a: 1,
        frame_h: 80,
        frame_w: 80,
        enc_convs: vec![
            ConvSpec { out_channels: 32, kernel: 5, stride: 1 },
            ConvSpec { out_channels: 32, kernel: 5, stride: 2 },
            ConvSpec { out_channels: 32, kernel: 5, stride: 2 },
            ConvSpec { out_channels: 10, kernel: 5, stride: 2 },
        ],
        enc_fc: 200,
        dec_fc: vec![200, 10 * 10 * 10],
        dec_bottleneck: (10, 10, 10),
        dec_deconvs: vec![
            DeconvSpec { out_channels: 32, kernel: 5, stride: 2, out_hw: (20, 20) },
            DeconvSpec { out_channels: 32, kernel: 5, stride: 2, out_hw: (40, 40) },
            DeconvSpec { out_channels: 32, kernel: 5, stride: 2, out_hw: (80, 80) },
            DeconvSpec { out_channels: 2, kernel: 5, stride: 1, out_hw: (80, 80) },
        ],
        trans_hidden: vec![100, 100],
        beta: 0.0,
        kl_weight: 0.1,
        jitter: 1e-6,
    }
}

/// Default configuration for an environment.
pub fn config_for(env: EnvId) -> ModelConfig {
    match env {
        EnvId::Pendulum => pendulum_config(),
        EnvId::CartPole => cartpole_config(),
    }
}
