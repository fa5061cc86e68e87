//! Window partitioning with cyclic shifts, and the inverse merge.

use ngsc_tensor::ops::build_index;
use ngsc_tensor::{Elem, Var};

use crate::error::{extent, Result};

/// Features tiled into non-overlapping `M×M` windows.
#[derive(Clone)]
pub struct WindowGrid<T> {
    /// `(B · numWindows, M², D)`, windows in row-major order per image.
    pub windows: Var<T>,
    /// `(B, H, W, D)` of the feature map the grid was cut from.
    pub origin_shape: [usize; 4],
    pub window: usize,
    /// Cyclic shift `(dy, dx)` applied before tiling.
    pub shift: (usize, usize),
}

impl<T: Elem> WindowGrid<T> {
    pub fn windows_per_image(&self) -> usize {
        let [_, h, w, _] = self.origin_shape;
        (h / self.window) * (w / self.window)
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    pub fn with_windows(&self, windows: Var<T>) -> Self {
        Self { windows, ..self.clone() }
    }
}

/// Largest even window size `≤ max_window` that tiles an `h×w` map.
pub fn effective_window(h: usize, w: usize, max_window: usize) -> Option<usize> {
    (2..=max_window).rev().find(|&m| m % 2 == 0 && h % m == 0 && w % m == 0)
}

fn dims4(feat_shape: &[usize]) -> Result<[usize; 4]> {
    feat_shape
        .try_into()
        .map_err(|_| extent("window_partition", format!("expected (B, H, W, D), got {feat_shape:?}")))
}

/// Rolls the map by `(−dy, −dx)` and cuts it into `m×m` windows.
pub fn window_partition<T: Elem>(feat: &Var<T>, m: usize, shift: (usize, usize)) -> Result<WindowGrid<T>> {
    let [b, h, w, d] = dims4(feat.shape())?;
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(extent("window_partition", format!("{h}x{w} not divisible by window {m}")));
    }
    let (nwy, nwx) = (h / m, w / m);
    let (dy, dx) = (shift.0 % h, shift.1 % w);
    let out_shape = [b * nwy * nwx, m * m, d];
    let index = build_index(&out_shape, |pos| {
        let (win, tok, c) = (pos[0], pos[1], pos[2]);
        let bi = win / (nwy * nwx);
        let (wy, wx) = ((win / nwx) % nwy, win % nwx);
        let y = (wy * m + tok / m + dy) % h;
        let x = (wx * m + tok % m + dx) % w;
        ((bi * h + y) * w + x) * d + c
    });
    Ok(WindowGrid {
        windows: feat.gather(index.into(), out_shape)?,
        origin_shape: [b, h, w, d],
        window: m,
        shift: (dy, dx),
    })
}

/// Exact inverse of [`window_partition`], including the inverse roll.
pub fn window_merge<T: Elem>(grid: &WindowGrid<T>) -> Result<Var<T>> {
    let [b, h, w, d] = grid.origin_shape;
    let m = grid.window;
    let expect = [b * (h / m) * (w / m), m * m, d];
    if m == 0 || h % m != 0 || w % m != 0 || grid.windows.shape() != expect {
        return Err(extent(
            "window_merge",
            format!("windows {:?} inconsistent with origin {:?} and window {m}", grid.windows.shape(), grid.origin_shape),
        ));
    }
    let nwx = w / m;
    let nw = (h / m) * nwx;
    let (dy, dx) = grid.shift;
    let index = build_index(&[b, h, w, d], |pos| {
        let (bi, y, x, c) = (pos[0], pos[1], pos[2], pos[3]);
        let sy = (y + h - dy) % h;
        let sx = (x + w - dx) % w;
        let win = bi * nw + (sy / m) * nwx + sx / m;
        let tok = (sy % m) * m + sx % m;
        (win * m * m + tok) * d + c
    });
    Ok(grid.windows.gather(index.into(), [b, h, w, d])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ngsc_tensor::Tensor;

    fn ramp(shape: [usize; 4]) -> Var<f32> {
        Var::constant(Tensor::from_fn(shape, |i| i as f32))
    }

    #[test]
    fn counts_windows() {
        let g = window_partition(&ramp([1, 16, 16, 1]), 8, (0, 0)).unwrap();
        assert_eq!(g.windows.shape(), &[4, 64, 1]);
    }

    #[test]
    fn single_window_is_flattened_input() {
        let x = ramp([1, 8, 8, 1]);
        let g = window_partition(&x, 8, (0, 0)).unwrap();
        assert_eq!(g.windows.value().data(), x.value().data());
    }

    #[test]
    fn indivisible_is_error() {
        assert!(window_partition(&ramp([1, 12, 16, 1]), 8, (0, 0)).is_err());
    }

    #[test]
    fn merge_inverts_partition() {
        for shift in [(0, 0), (4, 4), (3, 5)] {
            let x = ramp([2, 16, 16, 4]);
            let g = window_partition(&x, 8, shift).unwrap();
            assert_eq!(window_merge(&g).unwrap().value(), x.value());
        }
    }

    #[test]
    fn shifted_partition_rolls() {
        let x = ramp([1, 16, 16, 1]);
        let g = window_partition(&x, 8, (4, 4)).unwrap();
        // First token of the first window is the pixel at (4, 4).
        assert_eq!(g.windows.value().data()[0], (4 * 16 + 4) as f32);
    }

    #[test]
    fn effective_window_choice() {
        assert_eq!(effective_window(32, 32, 8), Some(8));
        assert_eq!(effective_window(4, 4, 8), Some(4));
        assert_eq!(effective_window(2, 6, 8), Some(2));
        assert_eq!(effective_window(12, 12, 8), Some(6));
        assert_eq!(effective_window(1, 1, 8), None);
    }
}
