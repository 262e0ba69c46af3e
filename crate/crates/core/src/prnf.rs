//! PRNF tensor files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"PRNF" | u32 version | u32 ndim | ndim x u32 extents | payload
//! ```
//!
//! Version 1 stores an `f32` payload. Version 2 is identical except the
//! payload is `f64`; the writer uses it only when a tensor holds values that
//! `f32` cannot represent exactly, so every write round-trips bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub const MAGIC: [u8; 4] = *b"PRNF";
pub const VERSION_F32: u32 = 1;
pub const VERSION_F64: u32 = 2;

/// Serializes with the narrowest lossless payload.
pub fn encode(t: &Tensor) -> Vec<u8> {
    let exact_f32 = t.data().iter().all(|&x| (x as f32) as f64 == x);
    let version = if exact_f32 { VERSION_F32 } else { VERSION_F64 };
    encode_version(t, version)
}

/// Serializes with an explicit payload version. Version 1 rounds to `f32`.
pub fn encode_version(t: &Tensor, version: u32) -> Vec<u8> {
    let width = if version == VERSION_F32 { 4 } else { 8 };
    let mut out = Vec::with_capacity(12 + 4 * t.ndim() + width * t.numel());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match version {
        VERSION_F32 => t
            .data()
            .iter()
            .for_each(|&x| out.extend_from_slice(&(x as f32).to_le_bytes())),
        _ => t
            .data()
            .iter()
            .for_each(|&x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let corrupt = |reason: String| Error::CorruptPayload {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let mut cursor = 4;
    let mut next_u32 = |what: &str| -> Result<u32> {
        let chunk = bytes
            .get(cursor..cursor + 4)
            .ok_or_else(|| corrupt(format!("truncated while reading {what}")))?;
        cursor += 4;
        Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
    };
    let version = next_u32("version")?;
    if version != VERSION_F32 && version != VERSION_F64 {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let ndim = next_u32("ndim")? as usize;
    let mut shape = Vec::with_capacity(ndim.min(16));
    for _ in 0..ndim {
        shape.push(next_u32("extent")? as usize);
    }
    let width = if version == VERSION_F32 { 4 } else { 8 };
    let payload = &bytes[12 + 4 * ndim..];
    let expected = numel(&shape)
        .checked_mul(width)
        .ok_or_else(|| corrupt(format!("extents {shape:?} overflow")))?;
    if payload.len() != expected {
        return Err(corrupt(format!(
            "extents {shape:?} need {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let data = if version == VERSION_F32 {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    Tensor::new(shape, data)
}

pub fn write(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
