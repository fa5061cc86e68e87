use ngsc_tensor::{Elem, Tensor};

use crate::error::{extent, CodecError, Result};
use crate::rdo::mse;

/// Reported for zero error and for empty regions.
pub const PSNR_CAP: f64 = 100.0;
/// Mask values at or above this belong to the ROI.
pub const ROI_THRESHOLD: f64 = 0.5;

fn db(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// PSNR in dB for `[0, 1]` images.
pub fn psnr<T: Elem>(x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<f64> {
    Ok(db(mse(x, x_hat)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionPsnr {
    /// From `w_roi·MSE_roi + (1−w_roi)·MSE_nroi`, or the non-empty region alone.
    pub full: f64,
    pub roi: f64,
    pub nroi: f64,
    pub roi_pixels: usize,
    pub nroi_pixels: usize,
}

/// Splits pixels by `r ≥ 0.5` and reports per-region PSNRs and their
/// weighted combination. `x` is `(B, C, H, W)`, `r` `(B, 1, H, W)`.
pub fn weighted_psnr<T: Elem>(x: &Tensor<T>, x_hat: &Tensor<T>, r: &Tensor<T>, w_roi: f64) -> Result<RegionPsnr> {
    if !(w_roi > 0.0 && w_roi < 1.0) {
        return Err(CodecError::Config(format!("w_roi must lie in (0, 1), got {w_roi}")));
    }
    let &[b, c, h, w] = x.shape() else {
        return Err(extent("weighted_psnr", format!("expected (B, C, H, W), got {:?}", x.shape())));
    };
    if x_hat.shape() != x.shape() || r.shape() != [b, 1, h, w] {
        return Err(extent("weighted_psnr", format!("x {:?}, x_hat {:?}, r {:?}", x.shape(), x_hat.shape(), r.shape())));
    }
    let plane = h * w;
    let (mut sum, mut count) = ([0.0f64; 2], [0usize; 2]);
    for (i, (a, bb)) in x.data().iter().zip(x_hat.data()).enumerate() {
        let pix = (i / (c * plane)) * plane + i % plane;
        let region = usize::from(r.data()[pix].to_f64_lossless() < ROI_THRESHOLD);
        let d = a.to_f64_lossless() - bb.to_f64_lossless();
        sum[region] += d * d;
        count[region] += 1;
    }
    let mse_of = |k: usize| if count[k] == 0 { None } else { Some(sum[k] / count[k] as f64) };
    let (roi, nroi) = (mse_of(0), mse_of(1));
    let full = match (roi, nroi) {
        (Some(a), Some(n)) => db(w_roi * a + (1.0 - w_roi) * n),
        (Some(a), None) => db(a),
        (None, Some(n)) => db(n),
        (None, None) => return Err(extent("weighted_psnr", "empty image")),
    };
    Ok(RegionPsnr {
        full,
        roi: roi.map_or(PSNR_CAP, db),
        nroi: nroi.map_or(PSNR_CAP, db),
        roi_pixels: count[0] / c,
        nroi_pixels: count[1] / c,
    })
}

/// `8·bytes / (H·W)` of the unpadded image.
pub fn bpp(total_bytes: usize, height: usize, width: usize) -> f64 {
    8.0 * total_bytes as f64 / (height * width) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let x = Tensor::from_fn([1, 3, 4, 4], |i| (i % 7) as f64 / 10.0);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP);
        let off = x.map(|v| v + 1.0 / 255.0);
        assert!((psnr(&x, &off).unwrap() - 48.1308).abs() < 1e-3);
        let tenth = x.map(|v| v + 0.1);
        assert!((psnr(&x, &tenth).unwrap() - 20.0).abs() < 1e-9);
        assert!((bpp(1000, 512, 768) - 0.020345).abs() < 1e-6);
    }
}
