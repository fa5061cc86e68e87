//! Self-describing container for a coded image.
//!
//! Layout, little-endian: magic `NGSC`, version `u8`, width `u16`,
//! height `u16`, QIndex mode `u8`, QIndex `u16` (fixed point over 65535),
//! model hash `u64`, z length `u32`, y length `u32`, z payload, y payload.

use crate::error::{CodecError, Result};

pub const MAGIC: &[u8; 4] = b"NGSC";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 28;
/// Scalar QIndex stored as 16-bit fixed point.
pub const QINDEX_SCALAR: u8 = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub width: u16,
    pub height: u16,
    pub q: u16,
    pub model_hash: u64,
    pub z: Vec<u8>,
    pub y: Vec<u8>,
}

/// Nearest 16-bit code of `q ∈ [0, 1]`.
pub fn q_to_fixed(q: f64) -> u16 {
    (q.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn q_from_fixed(q: u16) -> f64 {
    q as f64 / 65535.0
}

fn take<'a>(data: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if data.len() < n {
        return Err(CodecError::Bitstream(format!("truncated while reading {what}")));
    }
    let (head, rest) = data.split_at(n);
    *data = rest;
    Ok(head)
}

impl Bitstream {
    pub fn q_value(&self) -> f64 {
        q_from_fixed(self.q)
    }

    pub fn len(&self) -> usize {
        HEADER_BYTES + self.z.len() + self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(QINDEX_SCALAR);
        out.extend_from_slice(&self.q.to_le_bytes());
        out.extend_from_slice(&self.model_hash.to_le_bytes());
        out.extend_from_slice(&(self.z.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.y.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.z);
        out.extend_from_slice(&self.y);
        out
    }

    pub fn parse(mut data: &[u8]) -> Result<Self> {
        let d = &mut data;
        if take(d, 4, "magic")? != MAGIC {
            return Err(CodecError::Bitstream("not an NGSC stream".into()));
        }
        let version = take(d, 1, "version")?[0];
        if version != VERSION {
            return Err(CodecError::Bitstream(format!("unsupported version {version}")));
        }
        let u16_at = |d: &mut &[u8], what| -> Result<u16> { Ok(u16::from_le_bytes(take(d, 2, what)?.try_into().unwrap())) };
        let u32_at = |d: &mut &[u8], what| -> Result<u32> { Ok(u32::from_le_bytes(take(d, 4, what)?.try_into().unwrap())) };
        let width = u16_at(d, "width")?;
        let height = u16_at(d, "height")?;
        let mode = take(d, 1, "qindex mode")?[0];
        if mode != QINDEX_SCALAR {
            return Err(CodecError::Bitstream(format!("unknown QIndex mode {mode}")));
        }
        let q = u16_at(d, "qindex")?;
        let model_hash = u64::from_le_bytes(take(d, 8, "model hash")?.try_into().unwrap());
        let z_len = u32_at(d, "z length")? as usize;
        let y_len = u32_at(d, "y length")? as usize;
        let z = take(d, z_len, "z payload")?.to_vec();
        let y = take(d, y_len, "y payload")?.to_vec();
        if !d.is_empty() {
            return Err(CodecError::Bitstream(format!("{} trailing bytes", d.len())));
        }
        if width == 0 || height == 0 {
            return Err(CodecError::Bitstream("zero image extent".into()));
        }
        Ok(Self { width, height, q, model_hash, z, y })
    }
}
