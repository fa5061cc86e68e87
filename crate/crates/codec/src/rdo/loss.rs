use ngsc_tensor::{Elem, Tensor, Var};

use super::lambda::lambda_of_qindex;
use crate::entropy::total_bits;
use crate::error::{extent, CodecError, Result};
use crate::net::TrainOutput;

/// Distortion is measured on `[0, 1]` pixels and scaled by `255²` inside the
/// objective.
pub const PIXEL_SCALE: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    /// ROI-weighted MSE on `[0, 1]` pixels.
    pub distortion: f64,
    /// Bits per unpadded pixel.
    pub rate: f64,
    pub lambda: f64,
    /// `λ·255²·distortion + rate`.
    pub total: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(CodecError::Config(format!("ROI emphasis alpha must lie in [0, 1), got {alpha}")));
    }
    Ok(())
}

/// Per-pixel weights `(1−α) + α·r`, each image normalized to mean 1.
/// A field that is constant within an image becomes exactly 1.
pub fn weight_field<T: Elem>(r: &Tensor<T>, alpha: f64) -> Result<Tensor<f64>> {
    check_alpha(alpha)?;
    let &[b, 1, h, w] = r.shape() else {
        return Err(extent("weight_field", format!("expected (B, 1, H, W), got {:?}", r.shape())));
    };
    let plane = h * w;
    let mut out = Vec::with_capacity(b * plane);
    for img in r.data().chunks(plane) {
        let raw: Vec<f64> = img.iter().map(|v| (1.0 - alpha) + alpha * v.to_f64_lossless().clamp(0.0, 1.0)).collect();
        if raw.iter().all(|&v| v == raw[0]) {
            out.extend(std::iter::repeat(1.0).take(plane));
        } else {
            let mean = raw.iter().sum::<f64>() / plane as f64;
            out.extend(raw.iter().map(|v| v / mean));
        }
    }
    Ok(Tensor::new(vec![b, 1, h, w], out)?)
}

fn check_pair<T: Elem>(op: &'static str, x: &[usize], x_hat: &[usize], r: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let &[b, c, h, w] = x else {
        return Err(extent(op, format!("expected (B, C, H, W), got {x:?}")));
    };
    if x != x_hat || r.shape() != [b, 1, h, w] {
        return Err(extent(op, format!("x {x:?}, x_hat {x_hat:?}, r {:?}", r.shape())));
    }
    Ok((b, c, h * w))
}

/// Mean squared error over all elements, accumulated in data order.
pub fn mse<T: Elem>(x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(extent("mse", format!("{:?} against {:?}", x.shape(), x_hat.shape())));
    }
    let mut acc = 0.0;
    for (a, b) in x.data().iter().zip(x_hat.data()) {
        let d = a.to_f64_lossless() - b.to_f64_lossless();
        acc += d * d;
    }
    Ok(acc / x.numel().max(1) as f64)
}

/// `Σ w·(x−x̂)² / (B·C·H·W)` with one weight per pixel shared by all
/// channels. With a uniform mask this is [`mse`] bit for bit.
pub fn weighted_distortion<T: Elem>(x: &Tensor<T>, x_hat: &Tensor<T>, r: &Tensor<T>, alpha: f64) -> Result<f64> {
    let (_, c, plane) = check_pair("weighted_distortion", x.shape(), x_hat.shape(), r)?;
    let wf = weight_field(r, alpha)?;
    let mut acc = 0.0;
    for (i, (a, b)) in x.data().iter().zip(x_hat.data()).enumerate() {
        let d = a.to_f64_lossless() - b.to_f64_lossless();
        acc += wf.data()[(i / (c * plane)) * plane + i % plane] * (d * d);
    }
    Ok(acc / x.numel().max(1) as f64)
}

/// Differentiable form of [`weighted_distortion`].
pub fn weighted_distortion_var<T: Elem>(x: &Var<T>, x_hat: &Var<T>, r: &Tensor<T>, alpha: f64) -> Result<Var<T>> {
    let (_, c, plane) = check_pair("weighted_distortion", x.shape(), x_hat.shape(), r)?;
    let wf = weight_field(r, alpha)?;
    let w = Tensor::from_fn(x.shape().to_vec(), |i| T::of(wf.data()[(i / (c * plane)) * plane + i % plane]));
    Ok(x_hat.sub(x)?.square()?.mul(&Var::constant(w))?.mean()?)
}

/// `(−Σ log2 p_y − Σ log2 p_z) / pixels`.
pub fn rate_term<T: Elem>(y_likelihood: &Var<T>, z_likelihood: &Var<T>, pixels: usize) -> Result<Var<T>> {
    if pixels == 0 {
        return Err(extent("rate_term", "zero pixels"));
    }
    let bits = total_bits(y_likelihood)?.add(&total_bits(z_likelihood)?)?;
    Ok(bits.scale(1.0 / pixels as f64)?)
}

/// `λ(q)·255²·D + R` for a training pass on `x`.
pub fn rd_loss<T: Elem>(x: &Var<T>, out: &TrainOutput<T>, r: &Tensor<T>, q: f64, alpha: f64) -> Result<(Var<T>, LossTerms)> {
    let lambda = lambda_of_qindex(q);
    let distortion = weighted_distortion_var(x, &out.x_hat, r, alpha)?;
    let rate = rate_term(&out.y_likelihood, &out.z_likelihood, out.pixels)?;
    let total = distortion.scale(lambda * PIXEL_SCALE * PIXEL_SCALE)?.add(&rate)?;
    let terms = LossTerms {
        distortion: distortion.value().item().to_f64_lossless(),
        rate: rate.value().item().to_f64_lossless(),
        lambda,
        total: total.value().item().to_f64_lossless(),
    };
    Ok((total, terms))
}
