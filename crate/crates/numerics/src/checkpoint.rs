//! Versioned binary checkpoint of named tensors.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "GBCKPT\0\0"
//! version  u32
//! meta_len u32, meta bytes (UTF-8, free-form, usually JSON)
//! count    u32
//! repeated count times:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, dims u64 * rank
//!   data     f64 * product(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NumericsError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GBCKPT\0\0";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore, meta: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, t) in store.iter() {
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

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(NumericsError::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| NumericsError::Checkpoint(format!("invalid UTF-8: {e}")))
    }
}

pub fn decode(buf: &[u8]) -> Result<(ParamStore, String)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(NumericsError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let meta = c.string()?;
    let count = c.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = c.string()?;
        let rank = c.u32()? as usize;
        let shape = (0..rank)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    if c.pos != buf.len() {
        return Err(NumericsError::Checkpoint(format!(
            "{} trailing bytes",
            buf.len() - c.pos
        )));
    }
    Ok((store, meta))
}

pub fn save(path: impl AsRef<Path>, store: &ParamStore, meta: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(store, meta))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(ParamStore, String)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
