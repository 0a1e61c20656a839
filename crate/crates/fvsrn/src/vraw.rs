//! `.vraw` volume files.
//!
//! Layout (little endian): magic `FVSV`, u32 version, u32 X, Y, Z, u8 dtype
//! (0 = u8, 1 = f32), 3 pad bytes, then `X·Y·Z` samples x-fastest.

use std::path::Path;

use fvsrn_core::volume::{ScalarVolume, ValueMapping};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"FVSV";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeDtype {
    U8,
    F32,
}

impl VolumeDtype {
    fn code(self) -> u8 {
        match self {
            VolumeDtype::U8 => 0,
            VolumeDtype::F32 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            VolumeDtype::U8 => 1,
            VolumeDtype::F32 => 4,
        }
    }
}

impl std::str::FromStr for VolumeDtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "u8" => Ok(Self::U8),
            "f32" => Ok(Self::F32),
            other => Err(format!(
                "unknown volume dtype {other:?} (expected u8 or f32)"
            )),
        }
    }
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Parses a `.vraw` byte buffer.
///
/// u8 samples map to `v/255`. f32 samples already inside `[0, 1]` are kept
/// verbatim; anything else is min-max normalized and the affine map is
/// recorded in the volume's [`ValueMapping`].
pub fn decode(bytes: &[u8]) -> Result<ScalarVolume> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::format(
            bytes.len(),
            format!("header needs {HEADER_BYTES} bytes"),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4])),
        ));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let dims = [
        u32_at(bytes, 8) as usize,
        u32_at(bytes, 12) as usize,
        u32_at(bytes, 16) as usize,
    ];
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(Error::format(8 + 4 * axis, "zero dimension"));
    }
    let dtype = match bytes[20] {
        0 => VolumeDtype::U8,
        1 => VolumeDtype::F32,
        other => return Err(Error::format(20, format!("unknown dtype code {other}"))),
    };
    let count = dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .ok_or_else(|| Error::format(8, "dimensions overflow"))?;
    let payload = &bytes[HEADER_BYTES..];
    let needed = count * dtype.size();
    if payload.len() < needed {
        return Err(Error::format(
            bytes.len(),
            format!(
                "truncated payload: expected {needed} bytes, found {}",
                payload.len()
            ),
        ));
    }
    let volume = match dtype {
        VolumeDtype::U8 => {
            let data = payload[..count].iter().map(|&v| v as f32 / 255.0).collect();
            ScalarVolume::new(dims, data)?
        }
        VolumeDtype::F32 => {
            let raw: Vec<f32> = payload[..needed]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
                return Err(Error::format(HEADER_BYTES + 4 * i, "non-finite sample"));
            }
            normalize(dims, raw)?
        }
    };
    Ok(volume)
}

fn normalize(dims: [usize; 3], raw: Vec<f32>) -> Result<ScalarVolume> {
    if raw.iter().all(|v| (0.0..=1.0).contains(v)) {
        return Ok(ScalarVolume::new(dims, raw)?);
    }
    let lo = raw.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = raw.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    let (data, scale) = if range > 0.0 {
        (
            raw.iter()
                .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
                .collect(),
            range,
        )
    } else {
        (vec![0.0; raw.len()], 0.0)
    };
    Ok(ScalarVolume::with_mapping(
        dims,
        data,
        ValueMapping { offset: lo, scale },
    )?)
}

pub fn encode(volume: &ScalarVolume, dtype: VolumeDtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + volume.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in volume.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&[dtype.code(), 0, 0, 0]);
    match dtype {
        VolumeDtype::U8 => out.extend(volume.data().iter().map(|&v| (v * 255.0).round() as u8)),
        VolumeDtype::F32 => {
            for v in volume.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn read_volume(path: &Path) -> Result<ScalarVolume> {
    decode(&std::fs::read(path).at(path)?)
}

pub fn write_volume(volume: &ScalarVolume, path: &Path, dtype: VolumeDtype) -> Result<()> {
    std::fs::write(path, encode(volume, dtype)).at(path)
}
