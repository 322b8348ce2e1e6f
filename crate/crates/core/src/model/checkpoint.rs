//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "HMORPHCK"
//! version    u32
//! header     u32 length + UTF-8 JSON {"config": ..., "train_morphologies": [...]}
//! count      u32
//! tensor*    u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Parameters, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HMORPHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    #[serde(default)]
    train_morphologies: Vec<String>,
}

/// Parameters plus the names of the morphologies they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub train_morphologies: Vec<String>,
}

impl Checkpoint {
    pub fn new(params: Parameters, train_morphologies: Vec<String>) -> Self {
        Self {
            params,
            train_morphologies,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            config: self.params.config().clone(),
            train_morphologies: self.train_morphologies.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let layout = self.params.layout();
        out.extend_from_slice(&(layout.len() as u32).to_le_bytes());
        for (name, t) in layout.names().iter().zip(self.params.tensors()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, named) = decode(bytes)?;
        let params = assemble(&header.config, named)?;
        Ok(Self {
            params,
            train_morphologies: header.train_morphologies,
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> std::result::Result<Self, String> {
        let bytes = std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_bytes(&bytes).map_err(|e| format!("{}: {e}", path.display()))
    }
}

pub fn save_checkpoint(params: &Parameters) -> Vec<u8> {
    Checkpoint::new(params.clone(), Vec::new()).to_bytes()
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Parameters> {
    Checkpoint::from_bytes(bytes).map(|c| c.params)
}

/// Loads a checkpoint that must fit `expected`: tensor names and shapes are
/// checked against the layout `expected` implies.
pub fn load_checkpoint_expecting(bytes: &[u8], expected: &ModelConfig) -> Result<Parameters> {
    let (header, named) = decode(bytes)?;
    let params = assemble(expected, named)?;
    if &header.config != expected {
        return Err(ModelError::Header("stored config differs from the expected config".into()));
    }
    Ok(params)
}

fn assemble(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Parameters> {
    let layout = super::ParamLayout::new(config)?;
    if named.len() != layout.len() {
        return Err(ModelError::CheckpointShape(format!(
            "payload holds {} tensors, config implies {}",
            named.len(),
            layout.len()
        )));
    }
    for ((name, _), expected) in named.iter().zip(layout.names()) {
        if name != expected {
            return Err(ModelError::CheckpointShape(format!("found tensor `{name}` where `{expected}` was expected")));
        }
    }
    Parameters::from_tensors(config, named.into_iter().map(|(_, t)| t).collect())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(ModelError::Truncated(what))?;
        if end > self.bytes.len() {
            return Err(ModelError::Truncated(what));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<(String, Tensor)>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic").map_err(|_| ModelError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let header_len = r.u32("header length")? as usize;
    let header: Header =
        serde_json::from_slice(r.take(header_len, "header")?).map_err(|e| ModelError::Header(e.to_string()))?;
    let count = r.u32("tensor count")? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec())
            .map_err(|_| ModelError::Header("tensor name is not UTF-8".into()))?;
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(ModelError::CheckpointShape(format!("`{name}` has implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u64("tensor dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(ModelError::Truncated("tensor values"))?;
        let raw = r.take(numel.checked_mul(8).ok_or(ModelError::Truncated("tensor values"))?, "tensor values")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(ModelError::CheckpointShape(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((header, named))
}
