//! Model checkpoints (little-endian binary).
//!
//! Layout: magic "CGCK", version u32, the full config block, then the named
//! tensors sorted by name: name length u16, UTF-8 name, rank u8, dims u32[],
//! f32 data. Round-trips are value-exact at f32 precision, and a
//! load-then-save cycle is byte-identical.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use cgram_autodiff::{ParameterStore, Tensor};
use cgram_envs::EnvId;

use crate::config::{ConvSpec, DeconvSpec, ModelConfig};
use crate::net::Model;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    Format { field: &'static str, detail: String },
    UnsupportedVersion(u32),
    Model(cgram_autodiff::AdError),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint i/o error: {e}"),
            CheckpointError::Format { field, detail } => {
                write!(f, "checkpoint format error in field '{field}': {detail}")
            }
            CheckpointError::UnsupportedVersion(v) => {
                write!(f, "unsupported checkpoint version {v} (expected {CHECKPOINT_VERSION})")
            }
            CheckpointError::Model(e) => write!(f, "checkpoint model error: {e}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

impl From<cgram_autodiff::AdError> for CheckpointError {
    fn from(e: cgram_autodiff::AdError) -> Self {
        CheckpointError::Model(e)
    }
}

pub fn save_checkpoint<W: Write>(out: &mut W, model: &Model) -> Result<(), CheckpointError> {
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_config(out, &model.config)?;
    out.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (name, tensor) in model.params.iter() {
        let bytes = name.as_bytes();
        out.write_all(&(bytes.len() as u16).to_le_bytes())?;
        out.write_all(bytes)?;
        out.write_all(&[tensor.rank() as u8])?;
        for &d in tensor.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint_file(path: &Path, model: &Model) -> Result<(), CheckpointError> {
    let mut out = BufWriter::new(File::create(path)?);
    save_checkpoint(&mut out, model)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(input: &mut R) -> Result<Model, CheckpointError> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Format {
            field: "magic",
            detail: format!("expected {CHECKPOINT_MAGIC:?}, got {magic:?}"),
        });
    }
    let version = read_u32(input, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config = read_config(input)?;
    let n_tensors = read_u32(input, "tensor count")?;
    let mut params = ParameterStore::new();
    for _ in 0..n_tensors {
        let name_len = read_u16(input, "tensor name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(input, &mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes).map_err(|e| CheckpointError::Format {
            field: "tensor name",
            detail: e.to_string(),
        })?;
        let rank = read_u8(input, "tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(input, "tensor dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 4];
            read_exact(input, &mut b, "tensor data")?;
            data.push(f32::from_le_bytes(b) as f64);
        }
        let tensor = Tensor::new(shape, data).map_err(CheckpointError::Model)?;
        params.insert(&name, tensor)?;
    }
    Ok(Model::from_parts(config, params)?)
}

pub fn load_checkpoint_file(path: &Path) -> Result<Model, CheckpointError> {
    let mut input = BufReader::new(File::open(path)?);
    load_checkpoint(&mut input)
}

fn write_config<W: Write>(out: &mut W, cfg: &ModelConfig) -> Result<(), CheckpointError> {
    out.write_all(&[cfg.env.as_u8()])?;
    for v in [cfg.n_z, cfg.n_a, cfg.frame_h, cfg.frame_w, cfg.enc_fc] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for v in [cfg.beta, cfg.kl_weight, cfg.jitter] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&[cfg.enc_convs.len() as u8])?;
    for c in &cfg.enc_convs {
        for v in [c.out_channels, c.kernel, c.stride] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
    }
    out.write_all(&[cfg.dec_fc.len() as u8])?;
    for &w in &cfg.dec_fc {
        out.write_all(&(w as u32).to_le_bytes())?;
    }
    for v in [cfg.dec_bottleneck.0, cfg.dec_bottleneck.1, cfg.dec_bottleneck.2] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&[cfg.dec_deconvs.len() as u8])?;
    for d in &cfg.dec_deconvs {
        for v in [d.out_channels, d.kernel, d.stride, d.out_hw.0, d.out_hw.1] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
    }
    out.write_all(&[cfg.trans_hidden.len() as u8])?;
    for &w in &cfg.trans_hidden {
        out.write_all(&(w as u32).to_le_bytes())?;
    }
    Ok(())
}

fn read_config<R: Read>(input: &mut R) -> Result<ModelConfig, CheckpointError> {
    let env_byte = read_u8(input, "env-id")?;
    let env = EnvId::from_u8(env_byte).ok_or(CheckpointError::Format {
        field: "env-id",
        detail: format!("unknown environment id {env_byte}"),
    })?;
    let n_z = read_u32(input, "n_z")? as usize;
    let n_a = read_u32(input, "n_a")? as usize;
    let frame_h = read_u32(input, "frame_h")? as usize;
    let frame_w = read_u32(input, "frame_w")? as usize;
    let enc_fc = read_u32(input, "enc_fc")? as usize;
    let beta = read_f64(input, "beta")?;
    let kl_weight = read_f64(input, "kl_weight")?;
    let jitter = read_f64(input, "jitter")?;
    let n_convs = read_u8(input, "conv count")?;
    let mut enc_convs = Vec::with_capacity(n_convs as usize);
    for _ in 0..n_convs {
        enc_convs.push(ConvSpec {
            out_channels: read_u32(input, "conv spec")? as usize,
            kernel: read_u32(input, "conv spec")? as usize,
            stride: read_u32(input, "conv spec")? as usize,
        });
    }
    let n_dec_fc = read_u8(input, "decoder fc count")?;
    let mut dec_fc = Vec::with_capacity(n_dec_fc as usize);
    for _ in 0..n_dec_fc {
        dec_fc.push(read_u32(input, "decoder fc width")? as usize);
    }
    let dec_bottleneck = (
        read_u32(input, "bottleneck")? as usize,
        read_u32(input, "bottleneck")? as usize,
        read_u32(input, "bottleneck")? as usize,
    );
    let n_deconvs = read_u8(input, "deconv count")?;
    let mut dec_deconvs = Vec::with_capacity(n_deconvs as usize);
    for _ in 0..n_deconvs {
        dec_deconvs.push(DeconvSpec {
            out_channels: read_u32(input, "deconv spec")? as usize,
            kernel: read_u32(input, "deconv spec")? as usize,
            stride: read_u32(input, "deconv spec")? as usize,
            out_hw: (
                read_u32(input, "deconv spec")? as usize,
                read_u32(input, "deconv spec")? as usize,
            ),
        });
    }
    let n_trans = read_u8(input, "transition layer count")?;
    let mut trans_hidden = Vec::with_capacity(n_trans as usize);
    for _ in 0..n_trans {
        trans_hidden.push(read_u32(input, "transition width")? as usize);
    }
    Ok(ModelConfig {
        env,
        n_z,
        n_a,
        frame_h,
        frame_w,
        enc_convs,
        enc_fc,
        dec_fc,
        dec_bottleneck,
        dec_deconvs,
        trans_hidden,
        beta,
        kl_weight,
        jitter,
    })
}

fn read_exact<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    field: &'static str,
) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            CheckpointError::Format { field, detail: "file truncated".into() }
        } else {
            CheckpointError::Io(e)
        }
    })
}

fn read_u8<R: Read>(r: &mut R, field: &'static str) -> Result<u8, CheckpointError> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, field)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R, field: &'static str) -> Result<u16, CheckpointError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, field)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R, field: &'static str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, field)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R, field: &'static str) -> Result<f64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, field)?;
    Ok(f64::from_le_bytes(b))
}

/// Round-trip the parameters through f32, exactly as a save-then-load does.
pub fn quantize_params_to_f32(model: &mut Model) {
    let names: Vec<String> = model.params.names().cloned().collect();
    for name in names {
        let t = model.params.get(&name).expect("known name");
        let data: Vec<f64> = t.data().iter().map(|&v| v as f32 as f64).collect();
        let shape = t.shape().to_vec();
        model
            .params
            .set_values(&name, Tensor::new(shape, data).expect("finite"))
            .expect("shape unchanged");
    }
}
