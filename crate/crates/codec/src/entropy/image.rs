//! Whole-image encode and decode.

use ngsc_tensor::{Scope, Tensor, Var};

use super::bitstream::{q_from_fixed, q_to_fixed, Bitstream};
use super::cdf::CdfTable;
use super::likelihood::{gaussian_mass, logistic_mass, LIKELIHOOD_FLOOR, SIGMA_FLOOR};
use super::range_coder::{range_decode, range_encode};
use crate::error::{extent, CodecError, Result};
use crate::net::pad::{crop, pad_tensor, round_up};
use crate::net::{dequantize, symbols, CodecModel, Condition, HYPER_STRIDE, LATENT_STRIDE};

/// Encoder-side results alongside the stream.
pub struct Encoded {
    pub stream: Bitstream,
    /// Reconstruction the decoder will produce, `(1, 3, H, W)`.
    pub x_hat: Tensor<f32>,
    pub y_symbols: Vec<i32>,
    /// `(1, latent, H/16, W/16)` of the padded image.
    pub y_shape: Vec<usize>,
    /// Model bits `−log₂ P(ŷ)` per latent element (unquantized probabilities).
    pub y_bits: Vec<f64>,
    /// Bits the quantized tables assign to all coded symbols.
    pub table_bits: f64,
}

pub struct Decoded {
    pub x_hat: Tensor<f32>,
    pub y_symbols: Vec<i32>,
}

/// Per-channel tables of the hyper-latent prior.
pub fn z_tables(model: &CodecModel) -> Result<Vec<CdfTable>> {
    let loc = &model.store.get(model.net.prior_loc).value;
    let log_scale = &model.store.get(model.net.prior_log_scale).value;
    loc.data()
        .iter()
        .zip(log_scale.data())
        .map(|(&l, &ls)| {
            let (l, scale) = (l as f64, (ls as f64).exp());
            CdfTable::from_mass(|s| logistic_mass(s as f64 - l, scale).max(LIKELIHOOD_FLOOR))
        })
        .collect()
}

/// Table for the residual `round(y − μ)` under `N(0, σ²)`.
pub fn gaussian_table(sigma: f32) -> Result<CdfTable> {
    let s = (sigma as f64).max(SIGMA_FLOOR);
    CdfTable::from_mass(|k| gaussian_mass(k as f64, s).max(LIKELIHOOD_FLOOR))
}

fn clamp_i16(q: &mut [i32]) {
    for v in q {
        *v = (*v).clamp(i16::MIN as i32, i16::MAX as i32);
    }
}

/// Channel of each element of a `(1, C, H, W)` tensor in data order.
fn channel_of(shape: &[usize], i: usize) -> usize {
    (i / (shape[2] * shape[3])) % shape[1]
}

fn qindex_map(q: f64, h: usize, w: usize) -> Tensor<f32> {
    Tensor::full([1, 1, h, w], q as f32)
}

fn decode_tail(
    model: &CodecModel,
    s: &Scope<f32>,
    cond: &Condition<f32>,
    z_hat: Tensor<f32>,
    y_source: impl FnOnce(&Tensor<f32>, &Tensor<f32>) -> Result<Vec<i32>>,
    size: (usize, usize),
) -> Result<(Tensor<f32>, Vec<i32>, Tensor<f32>, Tensor<f32>)> {
    let (mu, sigma) = model.net.hyper_synthesis(s, &Var::constant(z_hat), cond)?;
    let (mu, sigma) = (mu.value().clone(), sigma.value().clone());
    let y_sym = y_source(&mu, &sigma)?;
    let y_hat = dequantize(&y_sym, mu.shape(), Some(&mu));
    let x_hat = crop(&model.net.synthesis(s, &Var::constant(y_hat), cond)?, size)?;
    Ok((x_hat.value().clone(), y_sym, mu, sigma))
}

/// Encodes `x` (`(1, 3, H, W)` in `[0, 1]`) at scalar QIndex `q`, with an
/// optional ROI mask `(1, 1, H, W)` fed to the analysis transform.
pub fn encode_image(model: &CodecModel, x: &Tensor<f32>, q: f64, roi: Option<&Tensor<f32>>) -> Result<Encoded> {
    let &[1, 3, h, w] = x.shape() else {
        return Err(extent("encode", format!("expected (1, 3, H, W), got {:?}", x.shape())));
    };
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(extent("encode", format!("{h}x{w} exceeds 16-bit extents")));
    }
    let q_fixed = q_to_fixed(q);
    let (ph, pw) = (round_up(h, HYPER_STRIDE), round_up(w, HYPER_STRIDE));
    let xp = pad_tensor(x, HYPER_STRIDE)?;
    let rp = match roi {
        Some(r) if r.shape() == [1, 1, h, w] => pad_tensor(r, HYPER_STRIDE)?,
        Some(r) => return Err(extent("encode", format!("ROI mask {:?} for image {h}x{w}", r.shape()))),
        None => Tensor::ones([1, 1, ph, pw]),
    };
    let m = qindex_map(q_from_fixed(q_fixed), ph, pw);

    let s = Scope::frozen(&model.store);
    let cond = model.net.condition(&s, &m)?;
    let y = model.net.analysis(&s, &Var::constant(xp), &m, &rp, &cond)?;
    let z = model.net.hyper_analysis(&s, &y, &cond)?;
    let mut z_sym = symbols(z.value(), None)?;
    clamp_i16(&mut z_sym);
    let z_hat = dequantize(&z_sym, z.shape(), None);

    let y_val = y.value().clone();
    let (x_hat, y_sym, _mu, sigma) = decode_tail(
        model,
        &s,
        &cond,
        z_hat,
        |mu, _| {
            let mut q = symbols(&y_val, Some(mu))?;
            clamp_i16(&mut q);
            Ok(q)
        },
        (h, w),
    )?;

    let zt = z_tables(model)?;
    let z_shape = z.shape().to_vec();
    let z_table_refs: Vec<&CdfTable> = (0..z_sym.len()).map(|i| &zt[channel_of(&z_shape, i)]).collect();
    let y_tables: Vec<CdfTable> = sigma.data().iter().map(|&sg| gaussian_table(sg)).collect::<Result<_>>()?;
    let table_bits = z_sym.iter().zip(&z_table_refs).map(|(&s, t)| t.cost_bits(s)).sum::<f64>()
        + y_sym.iter().zip(&y_tables).map(|(&s, t)| t.cost_bits(s)).sum::<f64>();
    let y_bits = y_sym
        .iter()
        .zip(sigma.data())
        .map(|(&k, &sg)| -gaussian_mass(k as f64, (sg as f64).max(SIGMA_FLOOR)).max(LIKELIHOOD_FLOOR).log2())
        .collect();

    let stream = Bitstream {
        width: w as u16,
        height: h as u16,
        q: q_fixed,
        model_hash: model.hash(),
        z: range_encode(&z_sym, z_table_refs)?,
        y: range_encode(&y_sym, &y_tables)?,
    };
    Ok(Encoded { stream, x_hat, y_symbols: y_sym, y_shape: y_val.shape().to_vec(), y_bits, table_bits })
}

/// Reconstructs the image of `stream`; refuses streams written by another model.
pub fn decode_image(model: &CodecModel, stream: &Bitstream) -> Result<Decoded> {
    let hash = model.hash();
    if stream.model_hash != hash {
        return Err(CodecError::ModelMismatch { stream: stream.model_hash, model: hash });
    }
    let (h, w) = (stream.height as usize, stream.width as usize);
    let (ph, pw) = (round_up(h, HYPER_STRIDE), round_up(w, HYPER_STRIDE));
    let m = qindex_map(stream.q_value(), ph, pw);
    let s = Scope::frozen(&model.store);
    let cond = model.net.condition(&s, &m)?;

    let cfg = &model.config;
    let z_shape = [1, cfg.hyper_channels, ph / HYPER_STRIDE, pw / HYPER_STRIDE];
    let zt = z_tables(model)?;
    let z_count: usize = z_shape.iter().product();
    let z_sym = range_decode(&stream.z, (0..z_count).map(|i| &zt[channel_of(&z_shape, i)]), z_count)?;
    let z_hat = dequantize(&z_sym, &z_shape, None);

    let y_count = cfg.latent_channels * (ph / LATENT_STRIDE) * (pw / LATENT_STRIDE);
    let (x_hat, y_symbols, _, _) = decode_tail(
        model,
        &s,
        &cond,
        z_hat,
        |_, sigma| {
            if sigma.numel() != y_count {
                return Err(extent("decode", format!("{} scales for {y_count} latents", sigma.numel())));
            }
            let tables: Vec<CdfTable> = sigma.data().iter().map(|&sg| gaussian_table(sg)).collect::<Result<_>>()?;
            range_decode(&stream.y, &tables, y_count)
        },
        (h, w),
    )?;
    Ok(Decoded { x_hat, y_symbols })
}
