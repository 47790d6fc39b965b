//! Checkpoint files: `LRT1`, a little-endian `u32` header length, a JSON
//! header (model config and `{name, shape}` table), then every tensor as
//! little-endian `f32` values in table order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LRTModel, ModelConfig};
use crate::error::{Error, Result};
use crate::lightfield::io::write_atomic;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LRT1";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    #[serde(default)]
    epoch: Option<u64>,
    tensors: Vec<TensorEntry>,
}

pub fn encode(model: &LRTModel, epoch: Option<u64>) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        epoch,
        tensors: model
            .params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json("<checkpoint header>", e))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::InvalidArgument("checkpoint header too large".into()))?;
    let mut out = Vec::with_capacity(8 + json.len() + 4 * model.count_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in model.params.iter() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Returns the model and the stored epoch, if any.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(LRTModel, Option<u64>)> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing LRT1 magic".into()));
    }
    let len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let json = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::json(path, e))?;
    let mut model = LRTModel::new(header.config)?;
    if header.tensors.len() != model.params.len() {
        return Err(bad(format!(
            "table lists {} tensors, config declares {}",
            header.tensors.len(),
            model.params.len()
        )));
    }
    let mut pos = 8 + len;
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let blob = bytes
            .get(pos..pos + 4 * n)
            .ok_or_else(|| bad(format!("truncated data for {}", entry.name)))?;
        let data = blob
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        model
            .params
            .set(&entry.name, Tensor::from_vec(&entry.shape, data)?)
            .map_err(|e| bad(e.to_string()))?;
        pos += 4 * n;
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok((model, header.epoch))
}

pub fn save(model: &LRTModel, path: &Path, epoch: Option<u64>) -> Result<()> {
    write_atomic(path, &encode(model, epoch)?)
}

pub fn load(path: &Path) -> Result<(LRTModel, Option<u64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
