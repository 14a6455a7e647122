//! Self-describing checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HPCK"            4 bytes magic
//! version: u32      currently 1
//! header_len: u64
//! header            UTF-8 JSON: { kind, config, tensors: [{ name, shape }] }
//! payload           raw f32 values of every tensor, in header order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"HPCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint kind is {found:?}, expected {expected:?}")]
    Kind { expected: String, found: String },
    #[error("tensor {0} missing from checkpoint")]
    MissingTensor(String),
    #[error("tensor {name}: shape {found:?} does not match model shape {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, config: serde_json::Value) -> Self {
        Self { kind: kind.into(), config, tensors: Vec::new() }
    }

    pub fn with_tensors<'a>(mut self, prefix: &str, named: impl IntoIterator<Item = (String, &'a Tensor)>) -> Self {
        for (name, t) in named {
            self.tensors.push((format!("{prefix}{name}"), t.clone()));
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(CheckpointError::Kind { expected: kind.into(), found: self.kind.clone() })
        }
    }

    /// Copies `<prefix><name>` tensors into the given destinations, checking shapes.
    pub fn restore<'a>(
        &self,
        prefix: &str,
        dest: impl IntoIterator<Item = (String, &'a mut Tensor)>,
    ) -> Result<(), CheckpointError> {
        for (name, t) in dest {
            let full = format!("{prefix}{name}");
            let src = self.get(&full).ok_or_else(|| CheckpointError::MissingTensor(full.clone()))?;
            if src.shape() != t.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: full,
                    expected: t.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize.saturating_add(header_len);
        if bytes.len() < header_end {
            return Err(CheckpointError::Truncated { expected: header_end, found: bytes.len() });
        }
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        let expected = header_end + header.tensors.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum::<usize>();
        if bytes.len() != expected {
            return Err(CheckpointError::Truncated { expected, found: bytes.len() });
        }
        let mut offset = header_end;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let len: usize = entry.shape.iter().product();
            let data = bytes[offset..offset + len * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += len * 4;
            tensors.push((entry.name, Tensor::from_vec(&entry.shape, data)));
        }
        Ok(Self { kind: header.kind, config: header.config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
        let mut bytes = Vec::new();
        fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(values in proptest::collection::vec(-1e6f32..1e6, 1..64), rows in 1usize..4) {
            let n = values.len() / rows * rows;
            prop_assume!(n > 0);
            let t = Tensor::from_vec(&[rows, n / rows], values[..n].to_vec());
            let ck = Checkpoint::new("test", serde_json::json!({"a": 1}))
                .with_tensors("m.", [("w".to_string(), &t)]);
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(back, ck);
        }
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let t = Tensor::zeros(&[3]);
        let bytes = Checkpoint::new("k", serde_json::Value::Null).with_tensors("", [("x".into(), &t)]).to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn restore_checks_shapes() {
        let t = Tensor::zeros(&[3]);
        let ck = Checkpoint::new("k", serde_json::Value::Null).with_tensors("", [("x".into(), &t)]);
        let mut wrong = Tensor::zeros(&[4]);
        let err = ck.restore("", [("x".to_string(), &mut wrong)]).unwrap_err();
        assert!(matches!(err, CheckpointError::ShapeMismatch { .. }));
    }
}
