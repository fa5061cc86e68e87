use std::io::Write;

use ngsc_tensor::{Elem, Tensor};

use crate::error::{extent, Result};

/// Modelled bits of one latent channel, laid out on the latent grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BitAllocationMap {
    pub channel: usize,
    pub height: usize,
    pub width: usize,
    /// `−log₂ p` per position, row-major.
    pub bits: Vec<f64>,
}

/// Picks the channel with the largest total `−log₂ p` of `(1, C, h, w)`
/// likelihoods (lowest index on ties).
pub fn bit_allocation_map<T: Elem>(likelihoods: &Tensor<T>) -> Result<BitAllocationMap> {
    let bits = likelihoods.map(|p| T::of(-p.to_f64_lossless().log2()));
    BitAllocationMap::from_bits(bits.data().iter().map(|b| b.to_f64_lossless()).collect(), likelihoods.shape())
}

impl BitAllocationMap {
    /// `bits` holds `−log₂ p` for a `(1, C, h, w)` latent.
    pub fn from_bits(bits: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let &[1, c, h, w] = shape else {
            return Err(extent("bit_allocation_map", format!("expected (1, C, h, w), got {shape:?}")));
        };
        if bits.len() != c * h * w || c == 0 {
            return Err(extent("bit_allocation_map", format!("{} values for {shape:?}", bits.len())));
        }
        let plane = h * w;
        let mut best = (0, f64::NEG_INFINITY);
        for (k, chunk) in bits.chunks(plane).enumerate() {
            let total: f64 = chunk.iter().sum();
            if total > best.1 {
                best = (k, total);
            }
        }
        let channel = best.0;
        Ok(Self { channel, height: h, width: w, bits: bits[channel * plane..(channel + 1) * plane].to_vec() })
    }

    pub fn total_bits(&self) -> f64 {
        self.bits.iter().sum()
    }

    /// Nearest-neighbour upsampling by `factor`, row-major.
    pub fn upsampled(&self, factor: usize) -> Vec<f64> {
        let w = self.width * factor;
        (0..self.height * factor * w).map(|i| self.bits[(i / w / factor) * self.width + (i % w) / factor]).collect()
    }

    /// Binary PGM of the upsampled map, scaled so the maximum is 255. A
    /// constant map is written as mid-gray.
    pub fn write_pgm(&self, factor: usize, mut out: impl Write) -> Result<()> {
        let values = self.upsampled(factor);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pixels: Vec<u8> = values
            .iter()
            .map(|&v| if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { 128 })
            .collect();
        write!(out, "P5\n{} {}\n255\n", self.width * factor, self.height * factor)?;
        out.write_all(&pixels)?;
        Ok(())
    }

    /// Raw bits on the latent grid, one CSV row per latent row.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for row in self.bits.chunks(self.width) {
            w.write_record(row.iter().map(|b| format!("{b}")))?;
        }
        w.flush()?;
        Ok(())
    }
}
