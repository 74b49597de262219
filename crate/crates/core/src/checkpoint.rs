//! Named-tensor container used for model weights and stacked graph features.
//!
//! Little-endian layout: magic `AEW1`, tensor count (u32), then per tensor
//! name length (u32), UTF-8 name, rank (u32), each dimension (u32) and the
//! f64 payload in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hsi::write_file;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"AEW1";

pub type NamedTensors = Vec<(String, Tensor)>;

pub fn encode(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<NamedTensors> {
    let mut r = Reader { bytes, at: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "AEW1",
        });
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.parse_error("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| Error::DimensionOverflow {
                path: path.into(),
                dims: dims.iter().map(|&d| d as u64).collect(),
            })?;
        let payload = r.take(numel * 8)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(&dims, data).map_err(|e| r.parse_error(&e.to_string()))?;
        out.push((name, tensor));
    }
    if r.at != bytes.len() {
        return Err(r.parse_error(&format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(out)
}

pub fn save(tensors: &[(String, Tensor)], path: &Path) -> Result<()> {
    write_file(path, &encode(tensors))
}

pub fn load(path: &Path) -> Result<NamedTensors> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Looks a tensor up by name, checking its shape.
pub fn find<'a>(tensors: &'a [(String, Tensor)], name: &str, shape: &[usize]) -> Result<&'a Tensor> {
    let (_, t) = tensors
        .iter()
        .find(|(n, _)| n == name)
        .ok_or_else(|| Error::InvalidArgument(format!("checkpoint has no tensor named {name:?}")))?;
    if t.shape() != shape {
        return Err(Error::shape("checkpoint", format!("{name}: expected {shape:?}, found {:?}", t.shape())));
    }
    Ok(t)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            path: self.path.into(),
            expected: (self.at as u64).saturating_add(n as u64),
            found: self.bytes.len() as u64,
        })?;
        let slice = &self.bytes[self.at..end];
        self.at = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn parse_error(&self, detail: &str) -> Error {
        Error::Parse {
            path: self.path.into(),
            line: 0,
            detail: format!("byte {}: {detail}", self.at),
        }
    }
}
