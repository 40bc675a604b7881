//! Binary checkpoint container.
//!
//! Layout: the 8 magic bytes `ACSSGCN1`, a little-endian `u64` byte length,
//! a UTF-8 JSON header of that length, then every parameter matrix in
//! [`ParamTree::entries`] order as row-major little-endian `f64`. Matrix
//! shapes are not stored; they follow from the header's dims, variant and
//! node count.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{LayerDims, ModelParams, Variant};
use crate::error::{Error, Result};
use crate::ndmath::Matrix;

pub const MAGIC: &[u8; 8] = b"ACSSGCN1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub dims: LayerDims,
    pub variant: Variant,
    pub mode: String,
    pub nodes: usize,
    pub seed: u64,
}

pub fn encode_checkpoint(header: &CheckpointHeader, params: &ModelParams) -> Result<Vec<u8>> {
    let text = serde_json::to_string(header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + text.len() + 8 * params.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for (_, m) in params.entries() {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ModelParams)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| Error::Format(format!("header length {len} exceeds file size")))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    // Shapes come from a fresh init; the values are then overwritten.
    let mut params = ModelParams::init(&header.dims, header.variant, header.nodes, 0, 0.0)?;
    let payload = &bytes[16 + len..];
    let expected = 8 * params.parameter_count();
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes of parameters, found {}",
            payload.len()
        )));
    }
    let mut chunks = payload.chunks_exact(8);
    for leaf in params.leaves_mut() {
        let (r, c) = leaf.shape();
        let data = chunks
            .by_ref()
            .take(r * c)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        *leaf = Matrix::new(r, c, data)?;
    }
    Ok((header, params))
}

pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, params: &ModelParams) -> Result<()> {
    let bytes = encode_checkpoint(header, params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelParams)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
