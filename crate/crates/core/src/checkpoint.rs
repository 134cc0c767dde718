//! Checkpoint container: a JSON header line followed by raw little-endian
//! 64-bit float payloads. Round-trips are byte-exact.
//!
//! Layout:
//! ```text
//! <header JSON>\n
//! <f64 payload, concatenated per header entry order>
//! ```
//! Header entries carry name, shape and byte offset (relative to the end of
//! the header line), so a file is self-describing; arbitrary JSON metadata
//! (model config, training state) rides along in `meta`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// A named collection of tensors plus free-form metadata.
pub struct Checkpoint<S> {
    pub tensors: BTreeMap<String, Tensor<S>>,
    pub meta: serde_json::Value,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            tensors: BTreeMap::new(),
            meta,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset,
            });
            offset += (t.numel() * 8) as u64;
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            tensors: entries,
            meta: self.meta.clone(),
        };
        let mut file = std::fs::File::create(path).map_err(io_err)?;
        let header_json =
            serde_json::to_string(&header).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        file.write_all(header_json.as_bytes()).map_err(io_err)?;
        file.write_all(b"\n").map_err(io_err)?;
        let mut payload = Vec::with_capacity(offset as usize);
        for t in self.tensors.values() {
            for v in &t.data {
                payload.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
            }
        }
        file.write_all(&payload).map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let io_err = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(io_err)?
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CheckpointError::Malformed("missing header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(header.format_version));
        }
        let payload = &bytes[newline + 1..];
        let mut tensors = BTreeMap::new();
        for entry in header.tensors {
            let numel: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + numel * 8;
            if end > payload.len() {
                return Err(CheckpointError::Malformed(format!(
                    "tensor {} extends past payload",
                    entry.name
                )));
            }
            let mut data = Vec::with_capacity(numel);
            for chunk in payload[start..end].chunks_exact(8) {
                let v = f64::from_le_bytes(chunk.try_into().unwrap());
                data.push(S::from_f64(v).ok_or_else(|| {
                    CheckpointError::Malformed(format!("value {v} not representable"))
                })?);
            }
            tensors.insert(
                entry.name,
                Tensor {
                    shape: entry.shape,
                    data,
                },
            );
        }
        Ok(Self {
            tensors,
            meta: header.meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let mut ck = Checkpoint::<f64>::new(serde_json::json!({"epoch": 3}));
        ck.tensors.insert(
            "b.bias".into(),
            Tensor::new(vec![3], vec![0.25, -1.5, f64::MIN_POSITIVE]).unwrap(),
        );
        ck.tensors.insert(
            "a.weight".into(),
            Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        ck.save(&path).unwrap();
        let loaded = Checkpoint::<f64>::load(&path).unwrap();
        assert_eq!(loaded.meta["epoch"], 3);
        assert_eq!(loaded.tensors.len(), 2);
        for (name, t) in &ck.tensors {
            let l = &loaded.tensors[name];
            assert_eq!(l.shape, t.shape);
            for (a, b) in l.data.iter().zip(t.data.iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name}");
            }
        }
        // Saving the loaded copy reproduces the file byte-for-byte.
        let path2 = dir.path().join("ck2.bin");
        loaded.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn rejects_future_versions() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(
            &path,
            b"{\"format_version\":99,\"tensors\":[],\"meta\":null}\n",
        )
        .unwrap();
        assert!(matches!(
            Checkpoint::<f64>::load(&path),
            Err(CheckpointError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.bin");
        std::fs::write(
            &path,
            b"{\"format_version\":1,\"tensors\":[{\"name\":\"w\",\"shape\":[4],\"offset\":0}],\"meta\":null}\n\x00\x00",
        )
        .unwrap();
        assert!(matches!(
            Checkpoint::<f64>::load(&path),
            Err(CheckpointError::Malformed(_))
        ));
    }
}
