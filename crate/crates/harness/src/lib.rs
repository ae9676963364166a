//! Experiment harness: configuration, training protocol, the beta sweep and
//! rollout comparisons behind the command-line interface.

pub mod config;
pub mod csvio;
pub mod rollout;
pub mod sweep;
pub mod train;

use anyhow::Result;
use sha2::{Digest, Sha256};
use std::path::Path;

/// Hex SHA-256 of a file's bytes.
pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}
