//! Quantized cumulative frequency tables.

use crate::error::{CodecError, Result};

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;
/// Default symbol range of model tables.
pub const SYMBOL_MIN: i32 = -64;
pub const SYMBOL_MAX: i32 = 63;

/// Cumulative frequencies over `[min, min + n)` plus an optional escape
/// bucket for symbols outside that range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    min: i32,
    /// `buckets + 1` entries, `cum[0] = 0`, last = [`TOTAL_FREQ`].
    cum: Vec<u32>,
    escape: bool,
}

impl CdfTable {
    /// Quantizes `probs` (for symbols `min, min+1, …`) to 16-bit frequencies.
    /// With `escape`, the mass missing from `probs` goes to an extra final
    /// bucket. Every bucket gets at least 1; rounding leftovers go to the
    /// most probable bucket.
    pub fn build(probs: &[f64], min: i32, escape: bool) -> Result<Self> {
        if probs.is_empty() {
            return Err(CodecError::Coder("empty symbol range".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CodecError::Coder("probabilities must be finite and non-negative".into()));
        }
        let buckets = probs.len() + usize::from(escape);
        if buckets as u64 > TOTAL_FREQ as u64 / 2 {
            return Err(CodecError::Coder(format!("{buckets} buckets exceed the table precision")));
        }
        let listed: f64 = probs.iter().sum();
        let escape_mass = if escape { (1.0 - listed).max(0.0) } else { 0.0 };
        let total = listed + escape_mass;
        if total <= 0.0 {
            return Err(CodecError::Coder("probabilities sum to zero".into()));
        }
        let spare = (TOTAL_FREQ as usize - buckets) as f64;
        let masses = probs.iter().copied().chain(escape.then_some(escape_mass));
        let mut freq: Vec<u32> = masses.map(|p| 1 + (p / total * spare).floor() as u32).collect();
        let used: u32 = freq.iter().sum();
        let argmax = freq.iter().enumerate().max_by_key(|&(i, f)| (*f, std::cmp::Reverse(i))).map(|(i, _)| i).unwrap_or(0);
        freq[argmax] += TOTAL_FREQ - used;
        let mut cum = Vec::with_capacity(buckets + 1);
        cum.push(0);
        let mut acc = 0;
        for f in freq {
            acc += f;
            cum.push(acc);
        }
        Ok(Self { min, cum, escape })
    }

    /// Table over the default range, escape enabled.
    pub fn from_mass(mass: impl Fn(i32) -> f64) -> Result<Self> {
        let probs: Vec<f64> = (SYMBOL_MIN..=SYMBOL_MAX).map(mass).collect();
        Self::build(&probs, SYMBOL_MIN, true)
    }

    pub fn min(&self) -> i32 {
        self.min
    }

    /// Number of in-range symbols.
    pub fn symbols(&self) -> usize {
        self.cum.len() - 1 - usize::from(self.escape)
    }

    pub fn has_escape(&self) -> bool {
        self.escape
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    /// Bucket index of `s`, or `None` if it needs the escape path.
    pub fn bucket(&self, s: i32) -> Option<usize> {
        let i = s.checked_sub(self.min)?;
        (i >= 0 && (i as usize) < self.symbols()).then_some(i as usize)
    }

    pub fn escape_bucket(&self) -> Option<usize> {
        self.escape.then(|| self.cum.len() - 2)
    }

    /// `(cum, freq)` of bucket `i`.
    pub fn range(&self, i: usize) -> (u32, u32) {
        (self.cum[i], self.cum[i + 1] - self.cum[i])
    }

    /// Bits the coder spends on `s` (escape includes its 16 raw bits).
    pub fn cost_bits(&self, s: i32) -> f64 {
        let bucket_bits = |i| -((self.range(i).1 as f64) / TOTAL_FREQ as f64).log2();
        match (self.bucket(s), self.escape_bucket()) {
            (Some(i), _) => bucket_bits(i),
            (None, Some(e)) => bucket_bits(e) + 16.0,
            (None, None) => f64::INFINITY,
        }
    }
}
