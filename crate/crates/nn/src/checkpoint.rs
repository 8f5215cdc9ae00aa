//! `RENW` checkpoint files.
//!
//! Layout: the 4-byte magic `RENW`, then for every registered tensor in registration order a
//! little-endian `u32` name length, the UTF-8 name, a `u32` dimension count, one `u32` per
//! dimension and the raw little-endian `f32` values. The file ends after the last tensor.

use std::fs;
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RENW";
const MAX_NAME: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_checkpoint(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::BadCheckpoint(format!("truncated {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a checkpoint without reference to any model.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(NnError::BadCheckpoint("missing RENW magic".into()));
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let mut entries = Vec::new();
    while cur.pos < bytes.len() {
        let len = cur.u32("name length")? as usize;
        if len > MAX_NAME {
            return Err(NnError::BadCheckpoint(format!("name length {len} too large")));
        }
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| NnError::BadCheckpoint("name is not UTF-8".into()))?
            .to_string();
        let ndims = cur.u32("dimension count")? as usize;
        if ndims > 4 {
            return Err(NnError::BadCheckpoint(format!("{name}: {ndims} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(cur.u32("dimension")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| NnError::BadCheckpoint(format!("{name}: size overflow")))?;
        let raw = cur.take(count, "tensor data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        entries.push(CheckpointEntry { name, shape, data });
    }
    Ok(entries)
}

/// Overwrites every tensor in `store` from `entries`; names, order and shapes must match.
pub fn apply_checkpoint(store: &mut ParamStore<f32>, entries: Vec<CheckpointEntry>) -> Result<()> {
    if entries.len() != store.len() {
        return Err(NnError::CheckpointMismatch(format!(
            "checkpoint has {} tensors, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (p, e) in store.iter_mut().zip(entries) {
        if p.name != e.name || p.value.shape() != e.shape.as_slice() {
            return Err(NnError::CheckpointMismatch(format!(
                "expected {} {:?}, found {} {:?}",
                p.name,
                p.value.shape(),
                e.name,
                e.shape
            )));
        }
        p.value = Tensor::new(&e.shape, e.data)?;
    }
    Ok(())
}

pub fn save_checkpoint(store: &ParamStore<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(store))?;
    Ok(())
}

pub fn load_checkpoint(store: &mut ParamStore<f32>, path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    apply_checkpoint(store, decode_checkpoint(&bytes)?)
}
