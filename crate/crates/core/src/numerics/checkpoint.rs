//! Checkpoint files: one line of compact JSON header, a newline, then the raw
//! little-endian tensor payload.
//!
//! ```text
//! {"format_version":1,"model_config":{..},"tensors":[{"name":..,"shape":[r,c],"dtype":"f64","byte_offset":0},..]}\n
//! <payload>
//! ```
//!
//! `byte_offset` is relative to the first payload byte.

use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: Dtype,
    pub byte_offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub model_config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: serde_json::Value,
    pub dtype: Dtype,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(model_config: serde_json::Value, store: &ParamStore, dtype: Dtype) -> Self {
        Self {
            model_config,
            dtype,
            tensors: store
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape(),
                dtype: self.dtype,
                byte_offset: payload.len(),
            });
            for &v in t.data() {
                match self.dtype {
                    Dtype::F64 => payload.extend_from_slice(&v.to_le_bytes()),
                    Dtype::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            model_config: self.model_config.clone(),
            tensors: entries,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let payload = &bytes[nl + 1..];
        let dtype = header.tensors.first().map_or(Dtype::F64, |e| e.dtype);
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_end = 0;
        for e in &header.tensors {
            let n = e.shape[0] * e.shape[1];
            let w = e.dtype.width();
            let end = e.byte_offset + n * w;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!("tensor {} runs past end of file", e.name)));
            }
            let raw = &payload[e.byte_offset..end];
            let data: Vec<f64> = match e.dtype {
                Dtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
            };
            tensors.push((e.name.clone(), Tensor::new(e.shape[0], e.shape[1], data)?));
            expected_end = expected_end.max(end);
        }
        if expected_end != payload.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing payload bytes",
                payload.len() - expected_end
            )));
        }
        Ok(Self {
            model_config: header.model_config,
            dtype,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
