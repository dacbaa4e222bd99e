//! Binary checkpoint: `"PTLM"`, u32 version, u32 header length, JSON
//! [`ModelConfig`] header, then every tensor in name order as
//! `u32 name_len, name, u8 rank, u32 dims[rank], f32 data[]`. All integers
//! and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, ParameterSet};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PTLM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hex SHA-256 of a byte string.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn checkpoint_bytes(params: &ParameterSet<f32>) -> Vec<u8> {
    let header = serde_json::to_vec(params.config()).expect("config serializes");
    let mut out = Vec::with_capacity(12 + header.len() + 4 * params.numel() + 64 * 40);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Writes the checkpoint (creating parent directories) and returns the
/// digest of the written bytes.
pub fn save_checkpoint(params: &ParameterSet<f32>, path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(params);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(digest_hex(&bytes))
}

#[derive(Clone, Debug)]
pub struct LoadedCheckpoint {
    pub params: ParameterSet<f32>,
    pub config: ModelConfig,
    /// SHA-256 of the file bytes; identifies the base model.
    pub content_hash: String,
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos,
                format!("truncated while reading {what} ({n} bytes wanted)"),
            )),
        }
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.pos, "tensor size overflows"))?;
        let b = self.take(len, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// Magic, version and JSON header shared by the binary artifact formats.
    pub fn preamble(&mut self, magic: &[u8; 4], version: u32) -> Result<&'a [u8]> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(m),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let at = self.pos;
        let v = self.u32("version")?;
        if v != version {
            return Err(Error::format(at, format!("unsupported version {v}")));
        }
        let len = self.u32("header length")? as usize;
        self.take(len, "header")
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<LoadedCheckpoint> {
    let mut r = Reader::new(bytes);
    let header_at = 12;
    let header = r.preamble(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let config: ModelConfig =
        serde_json::from_slice(header).map_err(|e| Error::format(header_at, format!("bad header: {e}")))?;
    config.validate().map_err(|e| Error::format(header_at, e.to_string()))?;

    let mut tensors = BTreeMap::new();
    while r.pos < bytes.len() {
        let at = r.pos;
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::format(at + 4, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(at, "tensor size overflows"))?;
        let data = r.f32s(numel, "tensor payload")?;
        if tensors.contains_key(&name) {
            return Err(Error::format(at, format!("duplicate tensor {name}")));
        }
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    let end = bytes.len();
    let params = ParameterSet::from_tensors(config, tensors)
        .map_err(|e| Error::format(end, format!("tensor set does not match header: {e}")))?;
    Ok(LoadedCheckpoint {
        params,
        config,
        content_hash: digest_hex(bytes),
    })
}
