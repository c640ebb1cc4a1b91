//! JSON-manifest + raw little-endian f32 payload helpers shared by every
//! on-disk format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_json<M: DeserializeOwned>(path: &Path) -> Result<M> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<M: Serialize>(path: &Path, value: &M) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Resolves a payload file named in a manifest relative to the manifest.
pub fn sibling(manifest: &Path, name: &str) -> PathBuf {
    manifest
        .parent()
        .map(|d| d.join(name))
        .unwrap_or_else(|| PathBuf::from(name))
}

/// Default payload name for a manifest: `x.json` → `x.bin`.
pub fn payload_name(manifest: &Path) -> String {
    let stem = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "payload".into());
    format!("{stem}.bin")
}

pub fn encode_f32(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

/// Reads a payload of exactly `expected` floats.
pub fn read_f32_payload(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let want = expected as u64 * 4;
    let have = bytes.len() as u64;
    if have != want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("header implies {want} payload bytes, file holds {have}"),
            start: have.min(want),
            end: have.max(want),
        });
    }
    Ok(decode_f32(&bytes))
}

/// Reads a payload of unknown length; the caller validates its size.
pub fn read_f32_payload_any(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() % 4 != 0 {
        let whole = bytes.len() as u64 / 4 * 4;
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "payload is not a whole number of 32-bit floats".into(),
            start: whole,
            end: bytes.len() as u64,
        });
    }
    Ok(decode_f32(&bytes))
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// First non-finite value, reported as a byte range.
pub fn check_finite(path: &Path, values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("non-finite value {}", values[i]),
            start: i as u64 * 4,
            end: i as u64 * 4 + 4,
        }),
        None => Ok(()),
    }
}
