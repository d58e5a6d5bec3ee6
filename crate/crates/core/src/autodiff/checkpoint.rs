//! Parameter files: an 8-byte little-endian header length, a JSON header
//! listing each tensor's name, shape and byte offset, then the raw
//! little-endian `f32` data.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    tensors: Vec<HeaderEntry>,
    meta: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut offset = 0;
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    for t in &ckpt.tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {} does not match its shape",
                t.name
            )));
        }
        entries.push(HeaderEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
        });
        offset += 4 * t.data.len();
    }
    let header = serde_json::to_vec(&Header {
        version: FORMAT_VERSION,
        tensors: entries,
        meta: ckpt.meta.clone(),
    })
    .expect("header serializes");
    let mut buf = Vec::with_capacity(8 + header.len() + offset);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for t in &ckpt.tensors {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .ok_or_else(|| corrupt("truncated header length"))?
        .try_into()
        .unwrap();
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let header_bytes = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(CheckpointError::Corrupt(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let data = &bytes[8 + hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let raw = data.get(e.offset..e.offset + 4 * n).ok_or_else(|| {
            CheckpointError::Corrupt(format!("tensor {} runs past the end", e.name))
        })?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor {
            name: e.name,
            shape: e.shape,
            data: values,
        });
    }
    Ok(Checkpoint {
        tensors,
        meta: header.meta,
    })
}
