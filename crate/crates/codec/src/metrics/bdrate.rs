use nalgebra::{DMatrix, DVector};

use super::rd::RdCurve;
use crate::error::{CodecError, Result};

/// Recorded next to every reported BD-rate; variants differ by ~0.1 points.
pub const BD_RATE_METHOD: &str = "classical Bjontegaard: cubic least-squares fit of log10(bpp) over PSNR";
/// Narrowest common PSNR interval accepted.
pub const MIN_OVERLAP_DB: f64 = 1.0;

/// Least-squares cubic `c0 + c1·x + c2·x² + c3·x³` through the points.
pub fn fit_cubic(xs: &[f64], ys: &[f64]) -> Result<[f64; 4]> {
    if xs.len() != ys.len() || xs.len() < 4 {
        return Err(CodecError::BdRate(format!("cubic fit needs at least 4 points, got {}", xs.len())));
    }
    let a = DMatrix::from_fn(xs.len(), 4, |i, j| xs[i].powi(j as i32));
    let b = DVector::from_column_slice(ys);
    let c = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| CodecError::BdRate(format!("cubic fit failed: {e}")))?;
    Ok([c[0], c[1], c[2], c[3]])
}

fn integral(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let anti = |x: f64| x * (c[0] + x * (c[1] / 2.0 + x * (c[2] / 3.0 + x * c[3] / 4.0)));
    anti(hi) - anti(lo)
}

/// Bjøntegaard delta rate of `test` against `anchor` in percent; negative
/// means `test` needs fewer bits for the same PSNR.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    let fit = |c: &RdCurve| -> Result<([f64; 4], f64, f64)> {
        if c.points.len() < 4 {
            return Err(CodecError::BdRate(format!("curve `{}` has {} points, need 4", c.name, c.points.len())));
        }
        if c.points.iter().any(|p| !(p.bpp > 0.0) || !p.psnr.is_finite()) {
            return Err(CodecError::BdRate(format!("curve `{}` has a non-positive rate or non-finite PSNR", c.name)));
        }
        let psnr: Vec<f64> = c.points.iter().map(|p| p.psnr).collect();
        let log_rate: Vec<f64> = c.points.iter().map(|p| p.bpp.log10()).collect();
        let lo = psnr.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = psnr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok((fit_cubic(&psnr, &log_rate)?, lo, hi))
    };
    let (pa, lo_a, hi_a) = fit(anchor)?;
    let (pt, lo_t, hi_t) = fit(test)?;
    let (lo, hi) = (lo_a.max(lo_t), hi_a.min(hi_t));
    if hi - lo < MIN_OVERLAP_DB {
        return Err(CodecError::BdRate(format!(
            "PSNR ranges overlap by less than {MIN_OVERLAP_DB} dB: `{}` spans [{lo_a:.3}, {hi_a:.3}], `{}` spans [{lo_t:.3}, {hi_t:.3}]",
            anchor.name, test.name
        )));
    }
    let avg = (integral(&pt, lo, hi) - integral(&pa, lo, hi)) / (hi - lo);
    Ok(100.0 * (10f64.powf(avg) - 1.0))
}
