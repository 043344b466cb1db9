//! Binary checkpoint format for a [`ParamStore`].
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        4 bytes   "RCQT"
//! version      u32       FORMAT_VERSION
//! count        u32       number of parameters
//! count times:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   rank       u32       always 2 for this crate
//!   dims       rank × u32
//!   payload    prod(dims) × f32
//! crc32        u32       CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Parameters are written in store order. Optimizer moments are not saved.

use std::fs;
use std::path::Path;

use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::TensorError;

pub const MAGIC: &[u8; 4] = b"RCQT";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.value(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        if self.pos + n > self.buf.len() {
            return Err(TensorError::CorruptFile(format!(
                "unexpected end of data at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a checkpoint into `(name, tensor)` pairs in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, TensorError> {
    if bytes.len() < 16 {
        return Err(TensorError::CorruptFile("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if &body[..4] != MAGIC {
        return Err(TensorError::CorruptFile("bad magic".into()));
    }
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let version = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
    if crc32fast::hash(body) != stored {
        return Err(TensorError::CorruptFile("checksum mismatch".into()));
    }
    if version != FORMAT_VERSION {
        return Err(TensorError::VersionMismatch(format!(
            "checkpoint format {version}, expected {FORMAT_VERSION}"
        )));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| TensorError::CorruptFile("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        if rank != 2 {
            return Err(TensorError::CorruptFile(format!(
                "{name}: rank {rank}, expected 2"
            )));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    if r.pos != body.len() {
        return Err(TensorError::CorruptFile(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    Ok(out)
}

/// Builds a fresh store from checkpoint bytes.
pub fn store_from_bytes(bytes: &[u8]) -> Result<ParamStore, TensorError> {
    let mut store = ParamStore::new();
    for (name, t) in decode(bytes)? {
        store.insert(&name, t)?;
    }
    Ok(store)
}

/// Overwrites `store`'s values from checkpoint bytes. Names, order and shapes
/// must match exactly.
pub fn load_into(store: &mut ParamStore, bytes: &[u8]) -> Result<(), TensorError> {
    let entries = decode(bytes)?;
    if entries.len() != store.len() {
        return Err(TensorError::VersionMismatch(format!(
            "checkpoint has {} parameters, model expects {}",
            entries.len(),
            store.len()
        )));
    }
    for (id, (name, t)) in store.ids().collect::<Vec<_>>().into_iter().zip(entries) {
        let expected = store.value(id).shape();
        if name != store.name(id) || t.shape() != expected {
            return Err(TensorError::VersionMismatch(format!(
                "checkpoint entry {name} {:?} does not match model entry {} {:?}",
                t.shape(),
                store.name(id),
                expected
            )));
        }
        *store.value_mut(id) = t;
    }
    Ok(())
}

pub fn save(store: &ParamStore, path: &Path) -> Result<(), TensorError> {
    fs::write(path, encode(store)).map_err(|e| TensorError::Io(e.to_string()))
}

pub fn load(path: &Path) -> Result<ParamStore, TensorError> {
    let bytes = fs::read(path).map_err(|e| TensorError::Io(e.to_string()))?;
    store_from_bytes(&bytes)
}
