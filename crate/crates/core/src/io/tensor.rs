//! `EYIT` tensor files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size      | field                      |
//! |--------|-----------|----------------------------|
//! | 0      | 4         | magic `EYIT`               |
//! | 4      | 2         | version (u16, = 1)         |
//! | 6      | 1         | dtype (u8, 1 = f32)        |
//! | 7      | 1         | rank (u8)                  |
//! | 8      | 8 × rank  | dims (u64 each)            |
//! | …      | 4 × ∏dims | row-major f32 payload      |

use std::fs;
use std::path::Path;

use super::IoError;

pub const TENSOR_MAGIC: [u8; 4] = *b"EYIT";
pub const TENSOR_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

const HEADER_FIXED: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self, IoError> {
        let expected = element_count(&dims)?;
        if expected != values.len() {
            return Err(IoError::ValueCount {
                dims,
                expected,
                found: values.len(),
            });
        }
        Ok(Self { dims, values })
    }
}

fn element_count(dims: &[usize]) -> Result<usize, IoError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| IoError::DimOverflow(dims.iter().map(|&d| d as u64).collect()))
}

pub fn encode_tensor(dims: &[usize], values: &[f32]) -> Result<Vec<u8>, IoError> {
    if dims.len() > u8::MAX as usize {
        return Err(IoError::RankTooLarge(dims.len()));
    }
    let expected = element_count(dims)?;
    if expected != values.len() {
        return Err(IoError::ValueCount {
            dims: dims.to_vec(),
            expected,
            found: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(IoError::NonFinite(i));
    }
    let mut out = Vec::with_capacity(HEADER_FIXED + 8 * dims.len() + 4 * values.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, IoError> {
    if bytes.len() < HEADER_FIXED {
        return Err(IoError::Truncated {
            what: "header",
            expected: HEADER_FIXED,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != TENSOR_MAGIC {
        return Err(IoError::BadMagic { found: magic });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TENSOR_VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(IoError::UnsupportedDtype(bytes[6]));
    }
    let rank = bytes[7] as usize;
    let header = HEADER_FIXED + 8 * rank;
    if bytes.len() < header {
        return Err(IoError::Truncated {
            what: "dimension table",
            expected: header,
            found: bytes.len(),
        });
    }
    let raw_dims: Vec<u64> = bytes[HEADER_FIXED..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let dims = raw_dims
        .iter()
        .map(|&d| usize::try_from(d))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| IoError::DimOverflow(raw_dims.clone()))?;
    let payload_bytes = element_count(&dims)
        .ok()
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| IoError::DimOverflow(raw_dims.clone()))?;
    let payload = &bytes[header..];
    if payload.len() < payload_bytes {
        return Err(IoError::Truncated {
            what: "payload",
            expected: payload_bytes,
            found: payload.len(),
        });
    }
    if payload.len() > payload_bytes {
        return Err(IoError::TrailingBytes(payload.len() - payload_bytes));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Tensor { dims, values })
}

pub fn write_tensor(path: impl AsRef<Path>, dims: &[usize], values: &[f32]) -> Result<(), IoError> {
    let path = path.as_ref();
    let bytes = encode_tensor(dims, values)?;
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, IoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_tensor(&bytes)
}
