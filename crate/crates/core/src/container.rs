//! Binary container shared by solutions, bases and trained models.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "WNDROM\0\x01"
//! kind       u32 length + UTF-8 bytes
//! metadata   u32 length + UTF-8 JSON document
//! blocks     u32 count, then per block:
//!              name   u32 length + UTF-8 bytes
//!              dtype  u8 (0 = f64, 1 = u64)
//!              rows   u64
//!              cols   u64
//!              data   rows*cols 8-byte values, column-major
//! checksum   32 bytes, SHA-256 of everything above
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"WNDROM\0\x01";

#[derive(Clone, Debug, PartialEq)]
pub enum BlockData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: BlockData,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub blocks: Vec<Block>,
}

impl Container {
    pub fn new(kind: &str, meta: impl Serialize) -> Result<Self> {
        let meta = serde_json::to_value(meta).map_err(|e| Error::Container(e.to_string()))?;
        Ok(Self { kind: kind.to_string(), meta, blocks: Vec::new() })
    }

    pub fn push_f64(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
        assert_eq!(rows * cols, data.len(), "block {name} has the wrong length");
        self.blocks.push(Block { name: name.into(), rows, cols, data: BlockData::F64(data) });
    }

    pub fn push_vec(&mut self, name: &str, data: &[f64]) {
        self.push_f64(name, data.len(), 1, data.to_vec());
    }

    pub fn push_matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        self.push_f64(name, m.nrows(), m.ncols(), m.as_slice().to_vec());
    }

    pub fn push_indices(&mut self, name: &str, idx: &[usize]) {
        let data = idx.iter().map(|&i| i as u64).collect();
        self.blocks.push(Block { name: name.into(), rows: idx.len(), cols: 1, data: BlockData::U64(data) });
    }

    fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Container(format!("missing block '{name}' in {} container", self.kind)))
    }

    pub fn has(&self, name: &str) -> bool {
        self.blocks.iter().any(|b| b.name == name)
    }

    pub fn f64_block(&self, name: &str) -> Result<(&[f64], usize, usize)> {
        let b = self.block(name)?;
        match &b.data {
            BlockData::F64(v) => Ok((v, b.rows, b.cols)),
            BlockData::U64(_) => Err(Error::Container(format!("block '{name}' is not f64"))),
        }
    }

    pub fn vec(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.f64_block(name)?.0.to_vec())
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let (v, r, c) = self.f64_block(name)?;
        Ok(DMatrix::from_column_slice(r, c, v))
    }

    pub fn indices(&self, name: &str) -> Result<Vec<usize>> {
        let b = self.block(name)?;
        match &b.data {
            BlockData::U64(v) => Ok(v.iter().map(|&i| i as usize).collect()),
            BlockData::F64(_) => Err(Error::Container(format!("block '{name}' is not u64"))),
        }
    }

    pub fn meta_as<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.meta.clone()).map_err(|e| Error::Container(format!("{} metadata: {e}", self.kind)))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Container(format!("expected a {kind} container, found {}", self.kind)))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.meta.to_string());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            put_str(&mut out, &b.name);
            match &b.data {
                BlockData::F64(v) => {
                    out.push(0);
                    out.extend_from_slice(&(b.rows as u64).to_le_bytes());
                    out.extend_from_slice(&(b.cols as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                BlockData::U64(v) => {
                    out.push(1);
                    out.extend_from_slice(&(b.rows as u64).to_le_bytes());
                    out.extend_from_slice(&(b.cols as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
            return Err(Error::Container("not a windrom container".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Container("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let kind = r.string()?;
        let meta_text = r.string()?;
        let meta = serde_json::from_str(&meta_text).map_err(|e| Error::Container(format!("metadata: {e}")))?;
        let n = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let len = rows.checked_mul(cols).ok_or_else(|| Error::Container("block size overflow".into()))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Container("block size overflow".into()))?)?;
            let words = raw.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).unwrap());
            let data = match dtype {
                0 => BlockData::F64(words.map(f64::from_le_bytes).collect()),
                1 => BlockData::U64(words.map(u64::from_le_bytes).collect()),
                t => return Err(Error::Container(format!("unknown dtype {t}"))),
            };
            blocks.push(Block { name, rows, cols, data });
        }
        if r.pos != body.len() {
            return Err(Error::Container("trailing bytes after last block".into()));
        }
        Ok(Self { kind, meta, blocks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Hex SHA-256 of the serialized container.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Container(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Container("invalid UTF-8".into()))
    }
}

/// Hex SHA-256 over a sequence of f64 slices.
pub fn hash_f64<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        for x in p {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = Container::new("test", serde_json::json!({"a": 1, "b": [1.5, 2.0]})).unwrap();
        c.push_vec("x", &[1.0, -0.0, f64::MAX, 1e-300]);
        c.push_matrix("m", &DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]));
        c.push_indices("idx", &[3, 1, 4]);
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.matrix("m").unwrap()[(1, 2)], 6.0);
        assert_eq!(back.indices("idx").unwrap(), vec![3, 1, 4]);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut c = Container::new("test", serde_json::json!({})).unwrap();
        c.push_vec("x", &[1.0, 2.0]);
        let mut bytes = c.to_bytes();
        let k = bytes.len() - 40;
        bytes[k] ^= 1;
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Container(_))));
        assert!(Container::from_bytes(&bytes[..20]).is_err());
    }
}
