//! Self-describing checkpoint container.
//!
//! Layout:
//!
//! ```text
//! b"BLRNCKPT"            magic
//! u32 LE                 format version
//! u64 LE                 header length in bytes
//! header                 UTF-8 JSON: {"meta": <any>, "tensors": [{"name", "shape"}]}
//! f32 LE × Σ|tensor|     tensor payloads in header order
//! f64 LE × Σ|array|      array payloads in header order
//! ```
//!
//! Floats in the JSON metadata are written in shortest round-trip form and
//! tensor payloads are raw bits, so save → load → save is byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"BLRNCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    arrays: Vec<ArrayEntry>,
}

/// Named f32 tensors, named f64 arrays and arbitrary JSON metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, a)| ArrayEntry {
                    name: name.clone(),
                    len: a.len(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::invalid(e.to_string()))?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 4).sum::<usize>()
            + self.arrays.iter().map(|(_, a)| a.len() * 8).sum::<usize>();
        let mut out = Vec::with_capacity(20 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (_, a) in &self.arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("bad header: {e}")))?;
        let mut data = &body[hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if data.len() < n * 4 {
                return Err(bad(format!("truncated payload for tensor `{}`", entry.name)));
            }
            let values = data[..n * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            data = &data[n * 4..];
            tensors.push((entry.name, Tensor::from_vec(&entry.shape, values)?));
        }
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            if data.len() < entry.len * 8 {
                return Err(bad(format!("truncated payload for array `{}`", entry.name)));
            }
            let values = data[..entry.len * 8]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            data = &data[entry.len * 8..];
            arrays.push((entry.name, values));
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes", data.len())));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
            arrays,
        })
    }

    /// Write atomically (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("partial");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Tensors whose name starts with `prefix`, in stored order.
    pub fn group(&self, prefix: &str) -> Vec<Tensor> {
        self.tensors
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.clone())
            .collect()
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a.as_slice())
    }
}
