//! Model checkpoints.
//!
//! ```text
//! HDFCKPT1 {"model":{..},"epoch":12,"val_dsc":0.91,"params":[{"name":..,"shape":[..]},..]}\n
//! <f32 little-endian values of every parameter, in listed order>
//! ```

use std::path::Path;

use denseformer::backbone::{HDenseFormer, ModelConfig};
use denseformer::ParamStore;
use serde::{Deserialize, Serialize};

use crate::error::{write_atomic, HarnessError, Result};

const MAGIC: &[u8] = b"HDFCKPT1 ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    /// Epoch (zero-based) whose weights are stored.
    pub epoch: usize,
    pub val_dsc: f64,
    pub params: Vec<ParamEntry>,
}

pub fn to_bytes(model: &ModelConfig, store: &ParamStore<f32>, epoch: usize, val_dsc: f64) -> Vec<u8> {
    let header = CheckpointHeader {
        model: model.clone(),
        epoch,
        val_dsc,
        params: store.iter().map(|p| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec() }).collect(),
    };
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header).expect("header serializes"));
    out.push(b'\n');
    for p in store.iter() {
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn save(path: &Path, model: &ModelConfig, store: &ParamStore<f32>, epoch: usize, val_dsc: f64) -> Result<()> {
    write_atomic(path, &to_bytes(model, store, epoch, val_dsc))
}

/// Rebuilds the model and fills every parameter from the payload. Names,
/// order and shapes must match the architecture exactly.
pub fn from_bytes(bytes: &[u8]) -> Result<(CheckpointHeader, HDenseFormer, ParamStore<f32>)> {
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| HarnessError::Checkpoint("missing HDFCKPT1 signature".into()))?;
    let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| HarnessError::Checkpoint("unterminated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&rest[..end]).map_err(|e| HarnessError::Checkpoint(format!("header: {e}")))?;
    let payload = &rest[end + 1..];

    let (model, mut store) = HDenseFormer::init::<f32>(&header.model, 0)?;
    if store.len() != header.params.len() {
        return Err(HarnessError::Checkpoint(format!(
            "architecture has {} parameter tensors, checkpoint lists {}",
            store.len(),
            header.params.len()
        )));
    }
    let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum::<usize>() * 4;
    if payload.len() != expected {
        return Err(HarnessError::Checkpoint(format!("payload has {} bytes, header implies {expected}", payload.len())));
    }
    let mut offset = 0;
    let ids: Vec<_> = store.ids().collect();
    for (id, entry) in ids.into_iter().zip(&header.params) {
        if store.name(id) != entry.name {
            return Err(HarnessError::Checkpoint(format!("expected parameter {}, found {}", store.name(id), entry.name)));
        }
        let target = store.get_mut(id);
        if target.shape() != entry.shape.as_slice() {
            return Err(HarnessError::Checkpoint(format!(
                "{} has shape {:?} in the checkpoint but {:?} in the model",
                entry.name,
                entry.shape,
                target.shape()
            )));
        }
        let n = target.numel();
        let values = target.make_mut();
        for (v, c) in values.iter_mut().zip(payload[offset..offset + 4 * n].chunks_exact(4)) {
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        offset += 4 * n;
    }
    Ok((header, model, store))
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, HDenseFormer, ParamStore<f32>)> {
    let bytes = std::fs::read(path).map_err(HarnessError::io(path))?;
    from_bytes(&bytes)
}
