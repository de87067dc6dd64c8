//! `DEMB` embedding files: magic, u32 version, u32 count, u32 dim, then
//! count*dim little-endian f32, then count u32-length-prefixed UTF-8 ids.

use std::path::Path;

use super::EvalError;
use crate::io::write_atomic;

pub const EMB_MAGIC: &[u8; 4] = b"DEMB";
pub const EMB_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<usize> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?) as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f32>>,
}

impl Embeddings {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim();
        let mut out = Vec::new();
        out.extend_from_slice(EMB_MAGIC);
        for v in [EMB_VERSION, self.vectors.len() as u32, dim as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.vectors {
            debug_assert_eq!(v.len(), dim);
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self, EvalError> {
        let bad = |d: &str| EvalError::Format {
            path: path.to_string(),
            detail: d.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated file"))? != EMB_MAGIC {
            return Err(bad("not a DEMB file"));
        }
        let next_u32 = |r: &mut Reader| r.u32().ok_or_else(|| bad("truncated file"));
        let version = next_u32(&mut r)?;
        if version != EMB_VERSION as usize {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = next_u32(&mut r)?;
        let dim = next_u32(&mut r)?;
        let mut vectors = Vec::with_capacity(count.min(bytes.len()));
        for _ in 0..count {
            let raw = r.take(dim * 4).ok_or_else(|| bad("truncated vectors"))?;
            vectors.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect());
        }
        let mut ids = Vec::with_capacity(count.min(bytes.len()));
        for _ in 0..count {
            let len = next_u32(&mut r)?;
            let raw = r.take(len).ok_or_else(|| bad("truncated ids"))?;
            ids.push(std::str::from_utf8(raw).map_err(|_| bad("id is not UTF-8"))?.to_string());
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { ids, vectors })
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        write_atomic(path, &self.to_bytes()).map_err(|e| EvalError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let bytes = std::fs::read(path).map_err(|e| EvalError::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
