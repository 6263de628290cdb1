//! Checkpoint container.
//!
//! Layout: magic `WSOC`, u32 LE format version, u64 LE header length, a UTF-8
//! JSON header (architecture, free-form metadata, tensor names and shapes),
//! then every tensor's values as f32 LE in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, FieldModel, ParamSet, ParamTensor, TensorInfo};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WSOC";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchConfig,
    metadata: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: FieldModel,
    pub metadata: serde_json::Value,
}

pub fn to_bytes(model: &FieldModel, metadata: &serde_json::Value) -> Vec<u8> {
    let header = Header {
        arch: model.arch.clone(),
        metadata: metadata.clone(),
        tensors: model.params.infos(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + model.params.scalar_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &model.params.tensors {
        for &x in &t.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fail = |reason: String| Error::format(path, reason);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fail("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| fail(format!("bad header: {e}")))?;
    let mut data = &bytes[body..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for info in header.tensors {
        let n: usize = info.shape.iter().product();
        if data.len() < n * 4 {
            return Err(fail(format!("truncated data for tensor {}", info.name)));
        }
        let values = data[..n * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        data = &data[n * 4..];
        tensors.push(ParamTensor {
            name: info.name,
            shape: info.shape,
            data: values,
        });
    }
    if !data.is_empty() {
        return Err(fail(format!("{} trailing bytes", data.len())));
    }
    let model = FieldModel::from_params(header.arch, ParamSet { tensors })
        .map_err(|e| fail(e.to_string()))?;
    Ok(Checkpoint {
        model,
        metadata: header.metadata,
    })
}

pub fn save(path: &Path, model: &FieldModel, metadata: &serde_json::Value) -> Result<()> {
    std::fs::write(path, to_bytes(model, metadata)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
