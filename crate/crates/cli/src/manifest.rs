//! Run manifest: what ran, with which configuration, and what it wrote.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Git blob id in the SHA-256 object format: `sha256("blob <len>\0" ++ data)`.
pub fn content_id(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputEntry {
    pub name: String,
    pub file: String,
    pub bytes: usize,
    pub content_id: String,
}

impl OutputEntry {
    pub fn new(file: &str, data: &[u8]) -> Self {
        let name = file
            .rsplit_once('.')
            .map_or(file, |(stem, _)| stem)
            .to_string();
        Self {
            name,
            file: file.to_string(),
            bytes: data.len(),
            content_id: content_id(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    /// SHA-256 of the canonical configuration (output directory excluded).
    pub config_hash: String,
    pub config: String,
    pub seed: u64,
    pub workers: usize,
    pub format: String,
    pub status: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<OutputEntry>,
}

pub fn unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}
