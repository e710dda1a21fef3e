//! The planar float raster (PFR) container.
//!
//! Layout: 12-byte magic `PADSHARP-PFR`, u32 version, u32 C, u32 H, u32 W,
//! u8 dtype (0 = f32, 1 = f64), then the planar samples; all little-endian.
//! A sidecar `<file>.json` carries the value range and band names.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::raster::{Precision, Raster, ValueRange};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 12] = b"PADSHARP-PFR";
pub const VERSION: u32 = 1;
const HEADER: usize = 16 + 12 + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub value_range: ValueRange,
    #[serde(default)]
    pub bands: Vec<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(raster: &Raster) -> Vec<u8> {
    let width = match raster.precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let mut buf = Vec::with_capacity(HEADER + raster.len() * width);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in [raster.channels(), raster.height(), raster.width()] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match raster.precision {
        Precision::F32 => {
            buf.push(0);
            for &v in raster.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Precision::F64 => {
            buf.push(1);
            for &v in raster.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Raster> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < HEADER {
        return Err(bad("truncated header"));
    }
    if &bytes[..12] != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(12);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let (c, h, w) = (
        u32_at(16) as usize,
        u32_at(20) as usize,
        u32_at(24) as usize,
    );
    let n = c * h * w;
    let body = &bytes[HEADER..];
    let (data, precision) = match bytes[28] {
        0 if body.len() == n * 4 => (
            body.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect(),
            Precision::F32,
        ),
        1 if body.len() == n * 8 => (
            body.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
            Precision::F64,
        ),
        0 | 1 => return Err(bad("sample count does not match header")),
        t => return Err(bad(&format!("unknown dtype tag {t}"))),
    };
    let mut r = Raster::from_vec(c, h, w, data)?;
    r.precision = precision;
    Ok(r)
}

pub fn write(path: &Path, raster: &Raster, bands: &[String]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(raster))?;
    let side = Sidecar {
        value_range: raster.value_range,
        bands: bands.to_vec(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(Raster, Sidecar)> {
    let bytes = fs::read(path)?;
    let mut r = decode(&bytes, path)?;
    let side_path = sidecar_path(path);
    let side = if side_path.exists() {
        serde_json::from_slice(&fs::read(&side_path)?).map_err(|e| Error::Format {
            path: side_path,
            reason: e.to_string(),
        })?
    } else {
        Sidecar::default()
    };
    r.value_range = side.value_range;
    Ok((r, side))
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    Ok(read(path)?.0)
}
