//! Parameterized building blocks shared by the transforms.
//!
//! Layers hold only [`ParamId`]s; values live in a [`ParamStore`]. Models
//! are always initialized in `f32` and cast when a 64-bit copy is needed,
//! so both precisions start from identical weights.

use ngsc_tensor::{Conv2dSpec, Elem, ParamId, ParamStore, Scope, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Builder { store: self.store, rng: self.rng, prefix }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<f32>) -> Result<ParamId> {
        Ok(self.store.add(self.full_name(name), value)?)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let bound = bound as f32;
        let rng = &mut *self.rng;
        let value = Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-bound..=bound));
        self.tensor(name, value)
    }

    pub fn full(&mut self, name: &str, shape: &[usize], value: f32) -> Result<ParamId> {
        self.tensor(name, Tensor::full(shape.to_vec(), value))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(b: &mut Builder, fan_in: usize, fan_out: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            weight: b.uniform("weight", &[fan_in, fan_out], bound)?,
            bias: if bias { Some(b.uniform("bias", &[fan_out], bound)?) } else { None },
        })
    }

    pub fn forward<T: Elem>(&self, s: &Scope<T>, x: &Var<T>) -> Result<Var<T>> {
        let bias = self.bias.map(|id| s.param(id));
        Ok(x.linear(&s.param(self.weight), bias.as_ref())?)
    }
}

/// Convolution weights are drawn from `U(±√3/√fan_in)`, unit variance gain.
const VARIANCE_GAIN: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
}

impl Conv {
    pub fn new(b: &mut Builder, c_in: usize, c_out: usize, k: usize, spec: Conv2dSpec, bias: bool) -> Result<Self> {
        let fan_in = c_in / spec.groups * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            weight: b.uniform("weight", &[c_out, c_in / spec.groups, k, k], VARIANCE_GAIN * bound)?,
            bias: if bias { Some(b.uniform("bias", &[c_out], bound)?) } else { None },
            spec,
        })
    }

    /// Stride-2, kernel-3 downsampling convolution.
    pub fn down(b: &mut Builder, c_in: usize, c_out: usize) -> Result<Self> {
        Self::new(b, c_in, c_out, 3, Conv2dSpec::new(2, 1, 1), true)
    }

    pub fn forward<T: Elem>(&self, s: &Scope<T>, x: &Var<T>) -> Result<Var<T>> {
        let bias = self.bias.map(|id| s.param(id));
        Ok(x.conv2d(&s.param(self.weight), bias.as_ref(), self.spec)?)
    }
}

/// Stride-2, kernel-4, padding-1 transposed convolution: exact ×2 upsampling.
#[derive(Clone, Debug)]
pub struct ConvUp {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvUp {
    pub fn new(b: &mut Builder, c_in: usize, c_out: usize) -> Result<Self> {
        Self::with_gain(b, c_in, c_out, VARIANCE_GAIN)
    }

    /// Same layer with weights drawn at `1/√fan_in`, for output heads that
    /// should start near zero.
    pub fn head(b: &mut Builder, c_in: usize, c_out: usize) -> Result<Self> {
        Self::with_gain(b, c_in, c_out, 1.0)
    }

    fn with_gain(b: &mut Builder, c_in: usize, c_out: usize, gain: f64) -> Result<Self> {
        // Each output pixel receives c_in·(k/stride)² = 4·c_in taps.
        let bound = 1.0 / ((4 * c_in) as f64).sqrt();
        Ok(Self {
            weight: b.uniform("weight", &[c_in, c_out, 4, 4], gain * bound)?,
            bias: b.uniform("bias", &[c_out], bound)?,
        })
    }

    pub fn forward<T: Elem>(&self, s: &Scope<T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(x.conv_transpose2d(&s.param(self.weight), Some(&s.param(self.bias)), 2, 1)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, dim: usize) -> Result<Self> {
        Ok(Self { gain: b.full("gain", &[dim], 1.0)?, bias: b.full("bias", &[dim], 0.0)? })
    }

    pub fn forward<T: Elem>(&self, s: &Scope<T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(x.layer_norm(&s.param(self.gain), &s.param(self.bias))?)
    }
}

/// `(B, C, H, W)` to `(B, H, W, C)`.
pub fn to_tokens<T: Elem>(x: &Var<T>) -> Result<Var<T>> {
    Ok(x.permute(&[0, 2, 3, 1])?)
}

/// `(B, H, W, C)` to `(B, C, H, W)`.
pub fn to_planes<T: Elem>(x: &Var<T>) -> Result<Var<T>> {
    Ok(x.permute(&[0, 3, 1, 2])?)
}
