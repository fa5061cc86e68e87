use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ngsc_tensor::ParamStore;
use serde::{Deserialize, Serialize};

use crate::error::{CodecError, Result};

const OPT_MAGIC: &[u8; 4] = b"NGOP";
const OPT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip: 1.0 }
    }
}

/// Adam with bias correction and global-norm gradient clipping. Moments
/// are kept per parameter in registration order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore<f32>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self { config, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients in `store`. Returns the
    /// gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore<f32>) -> Result<f64> {
        if self.m.len() != store.len() {
            return Err(CodecError::Config(format!("optimizer tracks {} tensors, store has {}", self.m.len(), store.len())));
        }
        let norm = store.grad_norm();
        if !norm.is_finite() {
            return Err(CodecError::Config("non-finite gradient".into()));
        }
        let c = &self.config;
        let scale = if c.clip > 0.0 && norm > c.clip { c.clip / norm } else { 1.0 };
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (k, (_, p)) in store.iter_mut().enumerate() {
            let Some(g) = p.grad.as_ref() else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &g)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                let g = g as f64 * scale;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let update = c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(norm)
    }

    /// Writes step count and moments losslessly:
    /// `"NGOP" u8:version u64:t u32:count` then per tensor
    /// `u32:len f64:m*len f64:v*len`, little-endian.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(OPT_MAGIC)?;
        w.write_all(&[OPT_VERSION])?;
        w.write_all(&self.t.to_le_bytes())?;
        w.write_all(&(self.m.len() as u32).to_le_bytes())?;
        for (m, v) in self.m.iter().zip(&self.v) {
            w.write_all(&(m.len() as u32).to_le_bytes())?;
            for x in m.iter().chain(v) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Restores state written by [`Adam::save`] for the parameters of `store`.
    pub fn load(config: AdamConfig, path: &Path, store: &ParamStore<f32>) -> Result<Self> {
        let bad = |msg: String| CodecError::Config(format!("optimizer state {}: {msg}", path.display()));
        let mut r = BufReader::new(File::open(path)?);
        let mut head = [0u8; 5];
        r.read_exact(&mut head)?;
        if &head[..4] != OPT_MAGIC || head[4] != OPT_VERSION {
            return Err(bad("not an optimizer state file".into()));
        }
        let mut b8 = [0u8; 8];
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b8)?;
        let t = u64::from_le_bytes(b8);
        r.read_exact(&mut b4)?;
        let count = u32::from_le_bytes(b4) as usize;
        let mut adam = Self::new(config, store);
        if count != adam.m.len() {
            return Err(bad(format!("{count} tensors, model has {}", adam.m.len())));
        }
        adam.t = t;
        for k in 0..count {
            r.read_exact(&mut b4)?;
            let len = u32::from_le_bytes(b4) as usize;
            if len != adam.m[k].len() {
                return Err(bad(format!("tensor {k} has {len} values, expected {}", adam.m[k].len())));
            }
            for x in adam.m[k].iter_mut().chain(adam.v[k].iter_mut()) {
                r.read_exact(&mut b8)?;
                *x = f64::from_le_bytes(b8);
            }
        }
        if r.read(&mut b4)? != 0 {
            return Err(bad("trailing bytes".into()));
        }
        Ok(adam)
    }
}
