//! Binary checkpoint container.
//!
//! ```text
//! magic    8 bytes  "STOXCKPT"
//! version  u32 LE
//! config   u64 LE length + UTF-8 JSON {"model": ModelConfig, "meta": ...}
//! count    u64 LE number of parameter records
//! record   u32 LE name length, name bytes,
//!          u32 LE rank, rank × u64 LE extents,
//!          product(extents) × f64 LE values
//! ```

use std::path::Path;

use serde_json::{json, Value};

use crate::config::ModelConfig;
use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::model::StoxModel;
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"STOXCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_json.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u64()? as usize;
        let config_json = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Data("checkpoint config is not UTF-8".into()))?;
        let count = r.u64()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Data("parameter name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.ok_or_else(|| Error::Data(format!("parameter {name} has an absurd shape")))?;
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Data("parameter too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Data("trailing bytes after checkpoint records".into()));
        }
        Ok(Self { config_json, params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Data("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes both parameter stores and the model configuration; `meta` is
/// stored alongside as free-form JSON.
pub fn save_model(path: &Path, model: &StoxModel, meta: Value) -> Result<()> {
    let config_json = json!({ "model": model.config(), "meta": meta }).to_string();
    let params = model
        .stores()
        .iter()
        .flat_map(|s| s.iter().map(|(n, t)| (n.to_string(), t.clone())))
        .collect();
    write_atomic(path, &Checkpoint { config_json, params }.encode())
}

/// Rebuilds the model recorded in a checkpoint. Returns the model and the
/// stored metadata.
pub fn load_model(path: &Path) -> Result<(StoxModel, Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = Checkpoint::decode(&bytes)?;
    let echo: Value = serde_json::from_str(&ckpt.config_json)
        .map_err(|e| Error::Data(format!("checkpoint config is not valid JSON: {e}")))?;
    let config: ModelConfig = serde_json::from_value(echo["model"].clone())
        .map_err(|e| Error::Data(format!("checkpoint model config: {e}")))?;
    let mut model = StoxModel::new(&config, 0)?;
    let mut seen = 0;
    for store in model.stores_mut() {
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let (_, t) = ckpt
                .params
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter {name}")))?;
            if t.shape() != store.get(id).shape() {
                return Err(Error::Data(format!(
                    "parameter {name} has shape {:?} in the checkpoint, model expects {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t.clone();
            seen += 1;
        }
    }
    if seen != ckpt.params.len() {
        return Err(Error::Data("checkpoint has parameters the model does not use".into()));
    }
    Ok((model, echo["meta"].clone()))
}
