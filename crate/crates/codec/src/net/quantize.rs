use ngsc_tensor::{Elem, Tensor, Var};
use rand::Rng;

use crate::error::{extent, Result};

/// `v + u` with `u ~ U(−½, ½)`; the noise is a constant, so gradients pass
/// through unchanged.
pub fn add_uniform_noise<T: Elem>(v: &Var<T>, rng: &mut impl Rng) -> Result<Var<T>> {
    let noise = Tensor::from_fn(v.shape().to_vec(), |_| T::of(rng.gen_range(-0.5..0.5)));
    Ok(v.add(&Var::constant(noise))?)
}

/// Integer symbols `round(v − mu)`, ties away from zero.
pub fn symbols<T: Elem>(v: &Tensor<T>, mu: Option<&Tensor<T>>) -> Result<Vec<i32>> {
    if let Some(mu) = mu {
        if mu.shape() != v.shape() {
            return Err(extent("quantize", format!("{:?} against mu {:?}", v.shape(), mu.shape())));
        }
    }
    Ok(v
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let centre = mu.map_or(0.0, |m| m.data()[i].to_f64_lossless());
            (x.to_f64_lossless() - centre).round() as i32
        })
        .collect())
}

/// `round(v − mu) + mu`.
pub fn quantize<T: Elem>(v: &Tensor<T>, mu: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let q = symbols(v, mu)?;
    Ok(dequantize(&q, v.shape(), mu))
}

/// Inverse of [`symbols`].
pub fn dequantize<T: Elem>(q: &[i32], shape: &[usize], mu: Option<&Tensor<T>>) -> Tensor<T> {
    let mut i = 0;
    Tensor::from_fn(shape.to_vec(), |_| {
        let centre = mu.map_or(T::zero(), |m| m.data()[i]);
        let out = T::of(q[i] as f64) + centre;
        i += 1;
        out
    })
}
