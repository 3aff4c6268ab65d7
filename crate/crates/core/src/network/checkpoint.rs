//! Checkpoint files: one JSON header line, then little-endian `f32` blobs.
//!
//! The header records the architecture, the epoch, an optional copy of the
//! run configuration, the byte offset of each tensor in the blob section and
//! a SHA-256 of that section.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Architecture, Network};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "fsnet-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Byte offset from the start of the blob section.
    pub offset: usize,
    /// Number of `f32` values.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
    pub blob_bytes: usize,
    pub sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_checkpoint(net: &Network, epoch: usize, config: Option<serde_json::Value>) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, values) in net.parameters() {
        tensors.push(TensorEntry {
            name,
            offset: blob.len(),
            len: values.len(),
        });
        for &v in values {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        architecture: net.arch.clone(),
        epoch,
        config,
        tensors,
        blob_bytes: blob.len(),
        sha256: hex(&Sha256::digest(&blob)),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(Network, CheckpointHeader)> {
    let bad = |m: String| Error::Checkpoint(m);
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != 1 {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    let blob = &bytes[nl + 1..];
    if blob.len() != header.blob_bytes {
        return Err(bad(format!("blob is {} bytes, header says {}", blob.len(), header.blob_bytes)));
    }
    let digest = hex(&Sha256::digest(blob));
    if digest != header.sha256 {
        return Err(bad(format!("checksum mismatch: expected {}, got {digest}", header.sha256)));
    }
    let mut net = Network::new(header.architecture.clone(), 0)?;
    let names: Vec<String> = net.parameters().into_iter().map(|(n, _)| n).collect();
    if names.len() != header.tensors.len() {
        return Err(bad(format!("expected {} tensors, found {}", names.len(), header.tensors.len())));
    }
    for ((name, param), entry) in names.iter().zip(net.parameters_mut()).zip(&header.tensors) {
        if *name != entry.name || param.len() != entry.len {
            return Err(bad(format!("tensor {} does not match the architecture", entry.name)));
        }
        let end = entry.offset + 4 * entry.len;
        let raw = blob
            .get(entry.offset..end)
            .ok_or_else(|| bad(format!("tensor {} runs past the blob", entry.name)))?;
        for (p, chunk) in param.iter_mut().zip(raw.chunks_exact(4)) {
            *p = f64::from(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")));
        }
    }
    Ok((net, header))
}

pub fn save_checkpoint(path: &Path, net: &Network, epoch: usize, config: Option<serde_json::Value>) -> Result<()> {
    std::fs::write(path, write_checkpoint(net, epoch, config)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
