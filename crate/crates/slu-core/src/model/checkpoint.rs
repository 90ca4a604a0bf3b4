//! Checkpoint serialization.
//!
//! Layout: an 8-byte little-endian header length, a JSON header, then the
//! raw tensor payload. The header records the format tag, the model config,
//! the label inventories, and every tensor's name, shape, and byte offset
//! into the payload; the payload is each tensor's data as little-endian
//! 64-bit floats, concatenated in header order. Saving is byte-deterministic
//! for identical inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use crate::error::{CoreError, Result};

const FORMAT_TAG: &str = "slu-checkpoint v1";

/// A loaded checkpoint: parameters plus the label inventories they were
/// trained against (index order is significant).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub intents: Vec<String>,
    pub slots: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    intents: Vec<String>,
    slots: Vec<String>,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

/// Serialize `params` with its inventories into checkpoint bytes.
pub fn checkpoint_bytes(
    params: &ModelParams,
    intents: &[String],
    slots: &[String],
) -> Result<Vec<u8>> {
    if params.config.num_intents != intents.len() || params.config.num_slots != slots.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "config expects {} intents / {} slots, inventories have {} / {}",
            params.config.num_intents,
            params.config.num_slots,
            intents.len(),
            slots.len()
        )));
    }
    params.check_finite()?;

    let named = params.named_tensors();
    let mut metas = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, tensor) in &named {
        metas.push(TensorMeta { name: name.clone(), shape: tensor.shape().to_vec(), offset });
        offset += (tensor.len() * 8) as u64;
    }
    let header = Header {
        format: FORMAT_TAG.to_string(),
        config: params.config.clone(),
        intents: intents.to_vec(),
        slots: slots.to_vec(),
        tensors: metas,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| CoreError::BadCheckpoint(e.to_string()))?;

    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset as usize);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, tensor) in &named {
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Write a checkpoint file.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    intents: &[String],
    slots: &[String],
) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params, intents, slots)?)?;
    Ok(())
}

/// Parse checkpoint bytes, validating the header against the reconstructed
/// tensor layout.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: String| CoreError::BadCheckpoint(msg);
    if bytes.len() < 8 {
        return Err(bad("file shorter than the 8-byte header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let rest = &bytes[8..];
    if rest.len() < header_len {
        return Err(bad(format!(
            "header length {header_len} exceeds remaining {} bytes",
            rest.len()
        )));
    }
    let header: Header = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| bad(format!("header is not valid JSON: {e}")))?;
    if header.format != FORMAT_TAG {
        return Err(bad(format!(
            "unsupported format {:?}, expected {FORMAT_TAG:?}",
            header.format
        )));
    }
    header.config.validate().map_err(|e| bad(format!("bad config: {e}")))?;
    if header.config.num_intents != header.intents.len()
        || header.config.num_slots != header.slots.len()
    {
        return Err(bad("inventory sizes disagree with config".into()));
    }

    let mut params = ModelParams::zeros(&header.config)?;
    let payload = &rest[header_len..];
    let mut expected_offset = 0u64;
    let tensors = params.named_tensors_mut();
    if header.tensors.len() != tensors.len() {
        return Err(bad(format!(
            "header lists {} tensors, config implies {}",
            header.tensors.len(),
            tensors.len()
        )));
    }
    for (meta, (name, tensor)) in header.tensors.iter().zip(tensors) {
        if meta.name != name {
            return Err(bad(format!("tensor {:?} out of order, expected {name:?}", meta.name)));
        }
        if meta.shape != tensor.shape() {
            return Err(bad(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                meta.shape,
                tensor.shape()
            )));
        }
        if meta.offset != expected_offset {
            return Err(bad(format!(
                "tensor {name:?} at offset {}, expected {expected_offset}",
                meta.offset
            )));
        }
        let nbytes = tensor.len() * 8;
        let start = expected_offset as usize;
        let slice = payload
            .get(start..start + nbytes)
            .ok_or_else(|| bad(format!("payload truncated inside tensor {name:?}")))?;
        for (dst, chunk) in tensor.data_mut().iter_mut().zip(slice.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        expected_offset += nbytes as u64;
    }
    if payload.len() as u64 != expected_offset {
        return Err(bad(format!(
            "payload has {} bytes, tensors account for {expected_offset}",
            payload.len()
        )));
    }
    params
        .check_finite()
        .map_err(|e| bad(format!("non-finite parameter values: {e}")))?;
    Ok(Checkpoint { params, intents: header.intents, slots: header.slots })
}

/// Read a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}
