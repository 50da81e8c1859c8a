//! Binary checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic    8 bytes  "TMPNCKPT"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen     {"kind", "config", "params": [{"name", "shape"}]}
//! payload           every parameter as f64, in header order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::{Model, ModelConfig, ModelKind};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TMPNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: ModelConfig,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Shape,
}

impl Model {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind,
            config: self.config.clone(),
            params: self
                .store
                .iter()
                .map(|(name, t)| Entry {
                    name: name.to_string(),
                    shape: t.shape().clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.store.count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.store.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("invalid checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len());
        let header_end = header_end.ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;

        let mut model = Model::new(header.kind, header.config, 0)?;
        if model.store.len() != header.params.len() {
            return Err(bad("parameter list does not match the architecture"));
        }
        let mut offset = header_end;
        let mut tensors = Vec::with_capacity(header.params.len());
        for (i, entry) in header.params.iter().enumerate() {
            let id = crate::params::ParamId(i);
            if model.store.name(id) != entry.name {
                return Err(bad(&format!(
                    "parameter {i} is '{}', expected '{}'",
                    entry.name,
                    model.store.name(id)
                )));
            }
            let n = entry.shape.numel();
            let end = offset + 8 * n;
            if end > bytes.len() {
                return Err(bad("truncated payload"));
            }
            let data = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor::from_shape(entry.shape.clone(), data)?);
            offset = end;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        model.store.load(tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Model::from_bytes(&bytes).map_err(|e| Error::file(path, e))
    }
}
