//! On-disk dataset container (little-endian binary).
//!
//! Layout: magic "CGRM", version u32, env-id u8, frame h u16, frame w u16,
//! channels u8, n_records u32, action_dim u8; then per record the o_t pixels
//! as u8 (value*255 rounded), the action as f32s, and the o_next pixels.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::collect::TransitionRecord;
use crate::env::EnvId;

pub const DATASET_MAGIC: [u8; 4] = *b"CGRM";
pub const DATASET_VERSION: u32 = 1;
/// magic + version + env + h + w + channels + n_records + action_dim
pub const DATASET_HEADER_SIZE: usize = 4 + 4 + 1 + 2 + 2 + 1 + 4 + 1;

#[derive(Debug)]
pub enum DatasetError {
    Io(std::io::Error),
    Format { field: &'static str, detail: String },
    UnsupportedVersion(u32),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::Io(e) => write!(f, "dataset i/o error: {e}"),
            DatasetError::Format { field, detail } => {
                write!(f, "dataset format error in field '{field}': {detail}")
            }
            DatasetError::UnsupportedVersion(v) => {
                write!(f, "unsupported dataset version {v} (expected {DATASET_VERSION})")
            }
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub env: EnvId,
    pub frame_h: u16,
    pub frame_w: u16,
    pub channels: u8,
    pub n_records: u32,
    pub action_dim: u8,
}

impl DatasetHeader {
    pub fn pixels_per_observation(&self) -> usize {
        self.channels as usize * self.frame_h as usize * self.frame_w as usize
    }

    pub fn record_size(&self) -> usize {
        2 * self.pixels_per_observation() + 4 * self.action_dim as usize
    }

    pub fn file_size(&self) -> usize {
        DATASET_HEADER_SIZE + self.n_records as usize * self.record_size()
    }
}

/// Quantized record exactly as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub o_t: Vec<u8>,
    pub action: Vec<f32>,
    pub o_next: Vec<u8>,
}

impl RawRecord {
    /// Pixels of o_t as f64 in [0, 1], channel-major.
    pub fn o_t_f64(&self) -> Vec<f64> {
        self.o_t.iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn o_next_f64(&self) -> Vec<f64> {
        self.o_next.iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn action_f64(&self) -> Vec<f64> {
        self.action.iter().map(|&a| a as f64).collect()
    }
}

fn quantize(pixels: &[f64]) -> Vec<u8> {
    pixels.iter().map(|&v| (v * 255.0).round() as u8).collect()
}

pub fn to_raw(record: &TransitionRecord) -> RawRecord {
    RawRecord {
        o_t: quantize(&record.o_t.to_channels()),
        action: record.action.iter().map(|&a| a as f32).collect(),
        o_next: quantize(&record.o_next.to_channels()),
    }
}

pub fn write_dataset<W: Write>(
    out: &mut W,
    env: EnvId,
    frame_hw: (usize, usize),
    records: &[TransitionRecord],
) -> Result<DatasetHeader, DatasetError> {
    let action_dim = records.first().map_or(0, |r| r.action.len());
    let header = DatasetHeader {
        env,
        frame_h: frame_hw.0 as u16,
        frame_w: frame_hw.1 as u16,
        channels: 2,
        n_records: records.len() as u32,
        action_dim: action_dim as u8,
    };
    out.write_all(&DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&[header.env.as_u8()])?;
    out.write_all(&header.frame_h.to_le_bytes())?;
    out.write_all(&header.frame_w.to_le_bytes())?;
    out.write_all(&[header.channels])?;
    out.write_all(&header.n_records.to_le_bytes())?;
    out.write_all(&[header.action_dim])?;
    for record in records {
        let raw = to_raw(record);
        out.write_all(&raw.o_t)?;
        for a in &raw.action {
            out.write_all(&a.to_le_bytes())?;
        }
        out.write_all(&raw.o_next)?;
    }
    Ok(header)
}

pub fn write_dataset_file(
    path: &Path,
    env: EnvId,
    frame_hw: (usize, usize),
    records: &[TransitionRecord],
) -> Result<DatasetHeader, DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = write_dataset(&mut out, env, frame_hw, records)?;
    out.flush()?;
    Ok(header)
}

pub fn read_dataset<R: Read>(input: &mut R) -> Result<(DatasetHeader, Vec<RawRecord>), DatasetError> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(DatasetError::Format {
            field: "magic",
            detail: format!("expected {DATASET_MAGIC:?}, got {magic:?}"),
        });
    }
    let version = read_u32(input, "version")?;
    if version != DATASET_VERSION {
        return Err(DatasetError::UnsupportedVersion(version));
    }
    let env_byte = read_u8(input, "env-id")?;
    let env = EnvId::from_u8(env_byte).ok_or(DatasetError::Format {
        field: "env-id",
        detail: format!("unknown environment id {env_byte}"),
    })?;
    let frame_h = read_u16(input, "frame-height")?;
    let frame_w = read_u16(input, "frame-width")?;
    let channels = read_u8(input, "channels")?;
    let n_records = read_u32(input, "n-records")?;
    let action_dim = read_u8(input, "action-dim")?;
    let header = DatasetHeader { env, frame_h, frame_w, channels, n_records, action_dim };

    let pix = header.pixels_per_observation();
    let mut records = Vec::with_capacity(n_records as usize);
    for _ in 0..n_records {
        let mut o_t = vec![0u8; pix];
        read_exact(input, &mut o_t, "record o_t pixels")?;
        let mut action = Vec::with_capacity(action_dim as usize);
        for _ in 0..action_dim {
            let mut buf = [0u8; 4];
            read_exact(input, &mut buf, "record action")?;
            action.push(f32::from_le_bytes(buf));
        }
        let mut o_next = vec![0u8; pix];
        read_exact(input, &mut o_next, "record o_next pixels")?;
        records.push(RawRecord { o_t, action, o_next });
    }
    Ok((header, records))
}

pub fn read_dataset_file(path: &Path) -> Result<(DatasetHeader, Vec<RawRecord>), DatasetError> {
    let mut input = BufReader::new(File::open(path)?);
    read_dataset(&mut input)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], field: &'static str) -> Result<(), DatasetError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DatasetError::Format { field, detail: "file truncated".into() }
        } else {
            DatasetError::Io(e)
        }
    })
}

fn read_u8<R: Read>(r: &mut R, field: &'static str) -> Result<u8, DatasetError> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, field)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R, field: &'static str) -> Result<u16, DatasetError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, field)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R, field: &'static str) -> Result<u32, DatasetError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, field)?;
    Ok(u32::from_le_bytes(b))
}
