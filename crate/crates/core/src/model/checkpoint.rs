//! Binary checkpoint: `u64` little-endian header length, a JSON header, then
//! every parameter group as little-endian `f32` in group-name order.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Parameters};
use crate::error::{Error, Result};

const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    n_classes: usize,
    groups: Vec<GroupEntry>,
}

#[derive(Serialize, Deserialize)]
struct GroupEntry {
    name: String,
    shape: [usize; 2],
    /// Byte offset into the data section.
    offset: usize,
}

impl Parameters {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut groups = Vec::new();
        let mut offset = 0;
        for (name, t) in self.named() {
            groups.push(GroupEntry {
                name,
                shape: [t.nrows(), t.ncols()],
                offset,
            });
            offset += t.len() * 4;
        }
        let header = serde_json::to_vec(&Header {
            version: VERSION,
            config: self.config.clone(),
            n_classes: self.n_classes(),
            groups,
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors() {
            for &v in t.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.version != VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        header.config.validate()?;
        let data = &bytes[8 + hlen..];
        let mut params = Parameters::zeros(&header.config);
        if header.n_classes > 0 {
            params = params.with_classifier(header.n_classes, 0)?;
        }
        let names = params.group_names();
        if names.len() != header.groups.len() {
            return Err(bad("group count does not match the configuration"));
        }
        for ((name, t), entry) in names.iter().zip(params.tensors_mut()).zip(&header.groups) {
            if *name != entry.name || [t.nrows(), t.ncols()] != entry.shape {
                return Err(bad(&format!("group {} does not match the configuration", entry.name)));
            }
            let end = entry.offset + t.len() * 4;
            let raw = data.get(entry.offset..end).ok_or_else(|| bad("truncated data"))?;
            let values: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            *t = Array2::from_shape_vec(t.raw_dim(), values).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::corpus::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rounds every value to `f32`, the checkpoint storage precision.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|v| f64::from(v as f32));
        }
    }
}
