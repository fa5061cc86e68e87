//! Byte-oriented range coder with carry propagation and 16-bit frequencies.
//!
//! Interval splits use exact 64-bit products, `lo = ⌊range·cum / 2¹⁶⌋`, so
//! encoder and decoder agree on every platform.

use super::cdf::{CdfTable, PRECISION_BITS};
use crate::error::{CodecError, Result};

const TOP: u32 = 1 << 24;
/// Raw fallback width for escaped symbols.
const RAW_BITS: u32 = 16;

fn split(range: u32, cum: u32) -> u32 {
    ((range as u64 * cum as u64) >> PRECISION_BITS) as u32
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            while self.cache_size > 0 {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = ((self.low as u32) << 8) as u64;
    }

    /// Codes the sub-interval `[cum, cum + freq)` of `2¹⁶`.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= 1 << PRECISION_BITS);
        let lo = split(self.range, cum);
        let hi = split(self.range, cum + freq);
        self.low += lo as u64;
        self.range = hi - lo;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode_symbol(&mut self, table: &CdfTable, s: i32) -> Result<()> {
        match (table.bucket(s), table.escape_bucket()) {
            (Some(i), _) => {
                let (c, f) = table.range(i);
                self.encode(c, f);
            }
            (None, Some(e)) => {
                let raw = i16::try_from(s).map_err(|_| CodecError::Coder(format!("escaped symbol {s} exceeds 16 bits")))?;
                let (c, f) = table.range(e);
                self.encode(c, f);
                self.encode(raw as u16 as u32, 1);
            }
            (None, None) => return Err(CodecError::Coder(format!("symbol {s} outside table without escape"))),
        }
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.shift_low();
        }
        // Flush the pending byte and any carry-blocked 0xFF run.
        let mut byte = self.cache;
        for _ in 0..self.cache_size {
            self.out.push(byte);
            byte = 0xFF;
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    data: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self { code: 0, range: u32::MAX, data, pos: 0 };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next()? as u32;
        }
        Ok(d)
    }

    fn next(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or_else(|| CodecError::Coder("truncated stream".into()))?;
        self.pos += 1;
        Ok(b)
    }

    /// Finds the bucket of `cum` whose sub-interval holds the code, then
    /// consumes it.
    fn decode_bucket(&mut self, cum: &[u32]) -> Result<usize> {
        let i = self.last_at_or_below(cum.len() - 1, |i| cum[i]);
        self.consume(cum[i], cum[i + 1] - cum[i])?;
        Ok(i)
    }

    /// Largest `i < n` with `split(range, start(i)) ≤ code`, for increasing
    /// `start` with `start(0) = 0`.
    fn last_at_or_below(&self, n: usize, start: impl Fn(usize) -> u32) -> usize {
        let (mut lo, mut hi) = (0usize, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if split(self.range, start(mid)) <= self.code {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn consume(&mut self, c: u32, f: u32) -> Result<()> {
        let lo = split(self.range, c);
        let hi = split(self.range, c + f);
        if self.code < lo || self.code >= hi {
            return Err(CodecError::Coder("corrupt stream".into()));
        }
        self.code -= lo;
        self.range = hi - lo;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next()? as u32;
        }
        Ok(())
    }

    pub fn decode_symbol(&mut self, table: &CdfTable) -> Result<i32> {
        let i = self.decode_bucket(table.cumulative())?;
        if Some(i) == table.escape_bucket() {
            let raw = self.last_at_or_below(1 << RAW_BITS, |v| v as u32) as u32;
            self.consume(raw, 1)?;
            return Ok(raw as u16 as i16 as i32);
        }
        Ok(table.min() + i as i32)
    }
}

/// Codes `symbols[i]` with `tables[i]`.
pub fn range_encode<'t>(symbols: &[i32], tables: impl IntoIterator<Item = &'t CdfTable>) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    let mut count = 0;
    for (t, &s) in tables.into_iter().zip(symbols) {
        enc.encode_symbol(t, s)?;
        count += 1;
    }
    if count != symbols.len() {
        return Err(CodecError::Coder(format!("{} symbols, {count} tables", symbols.len())));
    }
    Ok(enc.finish())
}

/// Decodes `count` symbols, the `i`-th with `tables[i]`.
pub fn range_decode<'t>(bytes: &[u8], tables: impl IntoIterator<Item = &'t CdfTable>, count: usize) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for t in tables.into_iter().take(count) {
        out.push(dec.decode_symbol(t)?);
    }
    if out.len() != count {
        return Err(CodecError::Coder(format!("{count} symbols requested, {} tables", out.len())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream() {
        let bytes = range_encode(&[], std::iter::empty()).unwrap();
        assert!(bytes.len() <= 8);
        assert!(range_decode(&bytes, std::iter::empty(), 0).unwrap().is_empty());
    }

    #[test]
    fn escape_round_trip() {
        let t = CdfTable::from_mass(|s| if s == 0 { 0.9 } else { 0.0005 }).unwrap();
        let syms = vec![0, 1, -64, 63, 64, -65, 1000, -32768, 32767, 0];
        let bytes = range_encode(&syms, std::iter::repeat(&t)).unwrap();
        assert_eq!(range_decode(&bytes, std::iter::repeat(&t), syms.len()).unwrap(), syms);
    }

    #[test]
    fn truncation_is_an_error() {
        let t = CdfTable::build(&[0.5, 0.25, 0.25], 0, false).unwrap();
        let syms: Vec<i32> = (0..200).map(|i| i % 3).collect();
        let bytes = range_encode(&syms, std::iter::repeat(&t)).unwrap();
        assert!(range_decode(&bytes[..bytes.len() - 3], std::iter::repeat(&t), syms.len()).is_err());
    }
}
