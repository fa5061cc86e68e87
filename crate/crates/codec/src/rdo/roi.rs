use ngsc_tensor::Tensor;
use rand::Rng;

/// Mask value outside every region of interest.
pub const ROI_BACKGROUND: f32 = 0.2;

/// Axis-aligned shape in pixel units; `(cy, cx)` is the centre and
/// `(hh, hw)` the half extents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RoiShape {
    Rect { cy: f64, cx: f64, hh: f64, hw: f64 },
    Ellipse { cy: f64, cx: f64, hh: f64, hw: f64 },
}

impl RoiShape {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            RoiShape::Rect { cy, cx, hh, hw } => (y - cy).abs() <= hh && (x - cx).abs() <= hw,
            RoiShape::Ellipse { cy, cx, hh, hw } => {
                let (dy, dx) = ((y - cy) / hh, (x - cx) / hw);
                dy * dy + dx * dx <= 1.0
            }
        }
    }

    /// Continuous area as a fraction of an `h×w` frame.
    pub fn area_fraction(&self, h: usize, w: usize) -> f64 {
        let (hh, hw, k) = match *self {
            RoiShape::Rect { hh, hw, .. } => (hh, hw, 4.0),
            RoiShape::Ellipse { hh, hw, .. } => (hh, hw, std::f64::consts::PI),
        };
        k * hh * hw / (h * w) as f64
    }
}

/// One to three rectangles or ellipses, each covering 5–40% of the frame
/// and lying fully inside it.
pub fn sample_roi_shapes(rng: &mut impl Rng, h: usize, w: usize) -> Vec<RoiShape> {
    let (hf, wf) = (h as f64, w as f64);
    let count = rng.gen_range(1..=3);
    (0..count)
        .map(|_| {
            let ellipse = rng.gen_bool(0.5);
            let k = if ellipse { std::f64::consts::PI } else { 4.0 };
            let frac = rng.gen_range(0.05..0.4);
            // hh·hw fixed by the area; the aspect ratio is limited by the
            // frame so the shape always fits.
            let prod = frac * hf * wf / k;
            let (fit_lo, fit_hi) = (prod / (wf / 2.0), hf / 2.0);
            let lo = fit_lo.max((prod / 2.0).sqrt());
            let hi = fit_hi.min((prod * 2.0).sqrt());
            let hh = if lo < hi { rng.gen_range(lo..hi) } else { prod.sqrt().clamp(fit_lo, fit_hi) };
            let hw = prod / hh;
            let cy = rng.gen_range(hh..=(hf - hh).max(hh));
            let cx = rng.gen_range(hw..=(wf - hw).max(hw));
            if ellipse {
                RoiShape::Ellipse { cy, cx, hh, hw }
            } else {
                RoiShape::Rect { cy, cx, hh, hw }
            }
        })
        .collect()
}

/// `(1, 1, H, W)` mask: 1 inside any shape (tested at pixel centres),
/// [`ROI_BACKGROUND`] elsewhere.
pub fn rasterize(shapes: &[RoiShape], h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn([1, 1, h, w], |i| {
        let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
        if shapes.iter().any(|s| s.contains(y, x)) {
            1.0
        } else {
            ROI_BACKGROUND
        }
    })
}

pub fn sample_roi_mask(rng: &mut impl Rng, h: usize, w: usize) -> Tensor<f32> {
    rasterize(&sample_roi_shapes(rng, h, w), h, w)
}
