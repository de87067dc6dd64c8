//! Binary tensor container shared by model checkpoints and optimizer state.
//!
//! Layout: `DUOS`, u32 version, u32 manifest byte length, manifest text,
//! then every tensor as raw little-endian f32 in manifest order. Manifest
//! lines are either `meta<TAB>key<TAB>value` or
//! `tensor<TAB>name<TAB>d0,d1,..<TAB>offset` with the offset counted in
//! floats from the start of the data block.

use std::path::Path;

use thiserror::Error;

use crate::io::write_atomic;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DUOS";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
    #[error("{path}: missing tensor {name}")]
    Missing { path: String, name: String },
    #[error("{path}: tensor {name} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        path: String,
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

/// Tensors plus string metadata, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl TensorFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta\t{k}\t{v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("tensor\t{name}\t{}\t{offset}\n", dims.join(",")));
            offset += t.numel();
        }
        let mut out = Vec::with_capacity(12 + manifest.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for (_, t) in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self, CheckpointError> {
        let bad = |detail: &str| CheckpointError::Format {
            path: path.to_string(),
            detail: detail.to_string(),
        };
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a DUOS file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let manifest = bytes
            .get(12..12 + mlen)
            .ok_or_else(|| bad("truncated manifest"))
            .and_then(|m| std::str::from_utf8(m).map_err(|_| bad("manifest is not UTF-8")))?;
        let data = &bytes[12 + mlen..];

        let mut file = TensorFile::default();
        let mut expected_floats = 0usize;
        for line in manifest.lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["meta", k, v] => file.meta.push((k.to_string(), v.to_string())),
                ["tensor", name, dims, offset] => {
                    let shape: Vec<usize> = dims
                        .split(',')
                        .map(|d| d.parse().map_err(|_| bad(&format!("bad shape for {name}"))))
                        .collect::<Result<_, _>>()?;
                    let offset: usize = offset.parse().map_err(|_| bad(&format!("bad offset for {name}")))?;
                    let n: usize = shape.iter().product();
                    let raw = data
                        .get(offset * 4..(offset + n) * 4)
                        .ok_or_else(|| bad(&format!("tensor {name} runs past end of file")))?;
                    let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    let t = Tensor::new(&shape, values).map_err(|e| bad(&e.to_string()))?;
                    file.tensors.push((name.to_string(), t));
                    expected_floats = expected_floats.max(offset + n);
                }
                _ => return Err(bad(&format!("unreadable manifest line {line:?}"))),
            }
        }
        if data.len() != expected_floats * 4 {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Copies named tensors into `dst`, checking shapes.
    pub fn fill(&self, path: &Path, names: &[String], dst: Vec<&mut Tensor<f32>>) -> Result<(), CheckpointError> {
        for (name, slot) in names.iter().zip(dst) {
            let src = self.tensor(name).ok_or_else(|| CheckpointError::Missing {
                path: path.display().to_string(),
                name: name.clone(),
            })?;
            if src.shape() != slot.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    path: path.display().to_string(),
                    name: name.clone(),
                    found: src.shape().to_vec(),
                    expected: slot.shape().to_vec(),
                });
            }
            slot.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bitwise() {
        let mut f = TensorFile::default();
        f.meta.push(("step".into(), "12".into()));
        f.tensors.push(("a".into(), Tensor::new(&[2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, 7.0]).unwrap()));
        f.tensors.push(("b.c".into(), Tensor::new(&[1], vec![0.25]).unwrap()));
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"DUOS");
        let back = TensorFile::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.meta("step"), Some("12"));
        assert_eq!(back.tensor("a").unwrap().data()[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(TensorFile::from_bytes(b"NOPE00000000", "x").is_err());
        let mut f = TensorFile::default();
        f.tensors.push(("a".into(), Tensor::new(&[4], vec![1.0; 4]).unwrap()));
        let bytes = f.to_bytes();
        assert!(TensorFile::from_bytes(&bytes[..bytes.len() - 2], "x").is_err());
    }
}
