//! `.vol` files: the 8-byte magic `VOXSRV01`, one JSON header line
//! `{"d","h","w","spacing_mm","label"}` ending in `'\n'`, then `d*h*w`
//! little-endian `f32` values in row-major `(D, H, W)` order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use voxsr_core::{ClassLabel, Volume};

pub const VOL_MAGIC: &[u8; 8] = b"VOXSRV01";
const MAX_HEADER: usize = 1 << 16;

#[derive(Debug, Error, PartialEq)]
pub enum VolFormatError {
    #[error("bad magic {found:?}: not a .vol file")]
    BadMagic { found: Vec<u8> },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes of voxel data, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("payload has {found} bytes but the header extents {extents:?} need {expected}")]
    ExtentMismatch { extents: [usize; 3], expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum VolError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: VolFormatError },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    d: usize,
    h: usize,
    w: usize,
    spacing_mm: [f64; 3],
    label: Option<ClassLabel>,
}

pub fn encode_vol(v: &Volume) -> Vec<u8> {
    let [d, h, w] = v.extents();
    let header = Header { d, h, w, spacing_mm: v.spacing_mm(), label: v.label() };
    let mut out = Vec::with_capacity(64 + 4 * v.len());
    out.extend_from_slice(VOL_MAGIC);
    out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
    out.push(b'\n');
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_vol(bytes: &[u8]) -> Result<Volume, VolFormatError> {
    if bytes.len() < VOL_MAGIC.len() || &bytes[..8] != VOL_MAGIC {
        return Err(VolFormatError::BadMagic { found: bytes[..bytes.len().min(8)].to_vec() });
    }
    let rest = &bytes[8..];
    let end = rest
        .iter()
        .take(MAX_HEADER)
        .position(|b| *b == b'\n')
        .ok_or_else(|| VolFormatError::MalformedHeader("no newline-terminated header line".into()))?;
    let header: Header = serde_json::from_slice(&rest[..end]).map_err(|e| VolFormatError::MalformedHeader(e.to_string()))?;
    let extents = [header.d, header.h, header.w];
    if extents.contains(&0) {
        return Err(VolFormatError::MalformedHeader(format!("extents {extents:?} must be >= 1")));
    }
    let expected = extents
        .iter()
        .try_fold(4usize, |acc, e| acc.checked_mul(*e))
        .ok_or_else(|| VolFormatError::MalformedHeader(format!("extents {extents:?} overflow")))?;
    let payload = &rest[end + 1..];
    if payload.len() < expected {
        return Err(VolFormatError::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(VolFormatError::ExtentMismatch { extents, expected, found: payload.len() });
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Volume::new(extents, header.spacing_mm, data)
        .map(|v| v.with_label(header.label))
        .map_err(|e| VolFormatError::MalformedHeader(e.to_string()))
}

pub fn write_vol(v: &Volume, path: impl AsRef<Path>) -> Result<(), VolError> {
    let path = path.as_ref();
    fs::write(path, encode_vol(v)).map_err(|source| VolError::Io { path: path.into(), source })
}

pub fn read_vol(path: impl AsRef<Path>) -> Result<Volume, VolError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| VolError::Io { path: path.into(), source })?;
    decode_vol(&bytes).map_err(|source| VolError::Format { path: path.into(), source })
}

/// Every `.vol` file directly inside `dir`, sorted by file name.
pub fn list_vols(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, VolError> {
    let dir = dir.as_ref();
    let io = |source| VolError::Io { path: dir.into(), source };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let p = entry.map_err(io)?.path();
        if p.extension().is_some_and(|e| e == "vol") && p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
