//! Binary file format for packed two-bit batches.
//!
//! Layout, all little-endian:
//!
//! | offset      | size        | field                                    |
//! |-------------|-------------|------------------------------------------|
//! | 0           | 4           | magic `"Q2BC"`                           |
//! | 4           | 2           | version, `u16` = 1                       |
//! | 6           | 8           | sample count `n`, `u64`                  |
//! | 14          | 8           | dimension `d`, `u64`                     |
//! | 22          | 8           | shrink factor `s`, IEEE `f64`            |
//! | 30          | 8·d         | column scales, IEEE `f64` each           |
//! | 30 + 8·d    | ⌈n·d/4⌉     | packed codes, row-major entry order      |
//!
//! Code packing follows [`crate::quant::pack`]: four codes per byte, first
//! entry in the least-significant bit pair.

use std::io::{Read, Write};

use thiserror::Error;

use crate::quant::{QuantError, QuantizedBatch};

pub const MAGIC: [u8; 4] = *b"Q2BC";
pub const VERSION: u16 = 1;
/// Header bytes before the scale block.
pub const HEADER_LEN: usize = 30;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad magic bytes: expected \"Q2BC\"")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("file truncated: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{extra} trailing bytes after the code block")]
    TrailingBytes { extra: usize },
    #[error("header field out of range: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Exact byte length of a file holding an `n × d` batch.
pub fn file_size(n: usize, d: usize) -> usize {
    HEADER_LEN + 8 * d + (n * d).div_ceil(4)
}

/// Serializes a batch to its exact byte representation.
pub fn to_bytes(batch: &QuantizedBatch) -> Vec<u8> {
    let (n, d) = (batch.n(), batch.d());
    let mut out = Vec::with_capacity(file_size(n, d));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.extend_from_slice(&batch.shrink().to_le_bytes());
    for &s in batch.scales() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(batch.packed_codes());
    out
}

/// Parses a batch from a complete byte buffer; trailing bytes are an error.
pub fn from_bytes(bytes: &[u8]) -> Result<QuantizedBatch, CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(CodecError::BadVersion(version));
    }
    let n = read_u64(&bytes[6..14])?;
    let d = read_u64(&bytes[14..22])?;
    if d == 0 {
        return Err(CodecError::BadHeader("dimension must be at least 1".into()));
    }
    let shrink = f64::from_le_bytes(bytes[22..30].try_into().unwrap());
    let total = n
        .checked_mul(d)
        .and_then(|nd| Some(HEADER_LEN + 8usize.checked_mul(d)? + nd.div_ceil(4)))
        .ok_or_else(|| CodecError::BadHeader("n·d overflows".into()))?;
    if bytes.len() < total {
        return Err(CodecError::Truncated {
            expected: total,
            actual: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(CodecError::TrailingBytes {
            extra: bytes.len() - total,
        });
    }
    let scales: Vec<f64> = bytes[HEADER_LEN..HEADER_LEN + 8 * d]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let packed = bytes[HEADER_LEN + 8 * d..].to_vec();
    Ok(QuantizedBatch::from_parts(n, d, packed, scales, shrink)?)
}

fn read_u64(bytes: &[u8]) -> Result<usize, CodecError> {
    let v = u64::from_le_bytes(bytes.try_into().unwrap());
    usize::try_from(v).map_err(|_| CodecError::BadHeader(format!("count {v} too large")))
}

pub fn write_batch<W: Write>(writer: &mut W, batch: &QuantizedBatch) -> Result<(), CodecError> {
    writer.write_all(&to_bytes(batch))?;
    Ok(())
}

pub fn read_batch<R: Read>(reader: &mut R) -> Result<QuantizedBatch, CodecError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
