//! Checkpoint container.
//!
//! Layout: the magic bytes, a little-endian `u64` header length, a JSON
//! header (format version, model configuration, tensor manifest) and the raw
//! little-endian `f32` tensor data. Offsets in the manifest are byte offsets
//! into the data section.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LEXCKPT\x01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    dtype: String,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

/// Serialise `model` to bytes.
pub fn checkpoint_bytes(model: &Model) -> Result<Vec<u8>> {
    let tensors = model
        .params
        .specs
        .iter()
        .map(|s| TensorEntry {
            name: s.name.clone(),
            shape: [s.rows, s.cols],
            dtype: "f32".into(),
            offset: s.offset * 4,
        })
        .collect();
    let header = serde_json::to_vec(&Header { version: FORMAT_VERSION, config: model.config().clone(), tensors })?;
    let mut out = Vec::with_capacity(16 + header.len() + model.params.len() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for &v in &model.params.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parse a checkpoint produced by [`checkpoint_bytes`].
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::data("not a checkpoint (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::data("truncated checkpoint header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..data_start])?;
    if header.version != FORMAT_VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {}", header.version)));
    }
    let mut model = super::init_model(&header.config, 0)?;
    let data = &bytes[data_start..];
    if header.tensors.len() != model.params.specs.len() {
        return Err(Error::data("checkpoint manifest does not match the model layout"));
    }
    for (entry, spec) in header.tensors.iter().zip(model.params.specs.clone()) {
        if entry.name != spec.name || entry.shape != [spec.rows, spec.cols] || entry.dtype != "f32" {
            return Err(Error::data(format!("checkpoint tensor {} does not match layout", entry.name)));
        }
        let end = entry.offset + spec.len() * 4;
        let raw = data.get(entry.offset..end).ok_or_else(|| Error::data(format!("tensor {} truncated", entry.name)))?;
        for (dst, chunk) in model.params.values[spec.range()].iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
    }
    if model.params.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("checkpoint contains non-finite parameters"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let bytes = checkpoint_bytes(model)?;
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    checkpoint_from_bytes(&fs::read(path)?)
}

impl Model {
    /// The model as it will be after a save/load round trip (parameters
    /// rounded to `f32`).
    pub fn quantized(&self) -> Model {
        let mut m = self.clone();
        m.params.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        m
    }
}
