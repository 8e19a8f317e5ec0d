//! Self-describing binary container used for model files and dataset caches.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic  "HPCNNC01"
//! header_len, header (UTF-8 JSON)
//! blob_count
//! per blob: name_len, name, ndim, dims..., f32 LE values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HPCNNC01";

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Blob {
    pub fn from_f64(name: impl Into<String>, shape: &[usize], data: &[f64]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Value,
    pub blobs: Vec<Blob>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated container at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

impl Container {
    pub fn new(header: Value) -> Self {
        Self { header, blobs: Vec::new() }
    }

    pub fn blob(&self, name: &str) -> Result<&Blob> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("container has no blob named `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(header.len() + 64);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, header.len())?;
        out.extend_from_slice(&header);
        put_u32(&mut out, self.blobs.len())?;
        for blob in &self.blobs {
            let expected: usize = blob.shape.iter().product();
            if expected != blob.data.len() {
                return Err(Error::Format(format!(
                    "blob `{}` shape {:?} does not match {} values",
                    blob.name,
                    blob.shape,
                    blob.data.len()
                )));
            }
            put_u32(&mut out, blob.name.len())?;
            out.extend_from_slice(blob.name.as_bytes());
            put_u32(&mut out, blob.shape.len())?;
            for &d in &blob.shape {
                put_u32(&mut out, d)?;
            }
            for v in &blob.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a model/dataset container (bad magic)".into()));
        }
        let header_len = cur.u32()?;
        let header: Value = serde_json::from_slice(cur.take(header_len)?)?;
        let count = cur.u32()?;
        let mut blobs = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = cur.u32()?;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("blob name is not UTF-8".into()))?;
            let ndim = cur.u32()?;
            let shape = (0..ndim).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = cur.take(n.checked_mul(4).ok_or_else(|| Error::Format("blob too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            blobs.push(Blob { name, shape, data });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after last blob", bytes.len() - cur.pos)));
        }
        Ok(Self { header, blobs })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
