//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset 0   8 bytes  magic "KANCAL01"
//! offset 8   u64      header length H
//! offset 16  H bytes  UTF-8 JSON header (see `CheckpointHeader`)
//! then       f64 x P  parameter tensors, concatenated in model order
//! ```
//!
//! Model order is, per KAN layer, `coeffs, w_spline, w_base`, and per dense
//! layer, `weight, bias`. `tensor_lengths` in the header lists the length of
//! every tensor so a reader never has to re-derive shapes.

use std::fs;
use std::path::Path;

use kancal_core::network::{LayerArch, Model, ModelKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"KANCAL01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub arch: Vec<LayerArch>,
    pub tau: f64,
    pub param_count: usize,
    pub tensor_lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub tau: f64,
}

pub fn encode(model: &Model, tau: f64) -> Result<Vec<u8>> {
    let tensors = model.tensors();
    let header = CheckpointHeader {
        kind: model.kind(),
        arch: model.arch(),
        tau,
        param_count: model.param_count(),
        tensor_lengths: tensors.iter().map(|t| t.len()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let total: usize = header.tensor_lengths.iter().sum();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |msg: &str| CliError::format(path, msg);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a kancal checkpoint"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(hlen))
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let mut model = Model::from_arch(header.kind, &header.arch)?;
    let lengths: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    if lengths != header.tensor_lengths {
        return Err(bad("tensor lengths do not match the architecture"));
    }
    let mut payload = &bytes[16 + hlen..];
    let total: usize = lengths.iter().sum();
    if payload.len() != 8 * total {
        return Err(bad(&format!(
            "expected {} parameter bytes, found {}",
            8 * total,
            payload.len()
        )));
    }
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(payload[..8].try_into().expect("8 bytes"));
            payload = &payload[8..];
        }
    }
    Ok(Checkpoint { model, tau: header.tau })
}

pub fn save(path: &Path, model: &Model, tau: f64) -> Result<()> {
    fs::write(path, encode(model, tau)?).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(CliError::MissingData(path.to_path_buf())),
        Err(e) => return Err(CliError::io(path, e)),
    };
    decode(&bytes, path)
}
