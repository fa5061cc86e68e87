//! Reflect padding of images to the codec's spatial granularity.

use ngsc_tensor::ops::build_index;
use ngsc_tensor::{Elem, Tensor, Var};

use crate::error::{extent, Result};

/// Reflects `i` into `[0, n)` without repeating the edge sample, folding as
/// often as needed so arbitrarily wide pads stay defined.
fn fold(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Next multiple of `multiple` that is `≥ n`.
pub fn round_up(n: usize, multiple: usize) -> usize {
    n.div_ceil(multiple) * multiple
}

/// Reflect-pads the bottom and right of `(B, C, H, W)` so both extents divide
/// `multiple`. Returns the padded map and the original `(H, W)`.
pub fn pad_to_multiple<T: Elem>(x: &Var<T>, multiple: usize) -> Result<(Var<T>, (usize, usize))> {
    let &[b, c, h, w] = x.shape() else {
        return Err(extent("pad_to_multiple", format!("expected (B, C, H, W), got {:?}", x.shape())));
    };
    if multiple == 0 {
        return Err(extent("pad_to_multiple", "multiple must be positive"));
    }
    let (ph, pw) = (round_up(h, multiple), round_up(w, multiple));
    if (ph, pw) == (h, w) {
        return Ok((x.clone(), (h, w)));
    }
    let shape = [b, c, ph, pw];
    let index = build_index(&shape, |p| ((p[0] * c + p[1]) * h + fold(p[2], h)) * w + fold(p[3], w));
    Ok((x.gather(index.into(), shape)?, (h, w)))
}

/// Top-left `(h, w)` crop of `(B, C, H, W)`.
pub fn crop<T: Elem>(x: &Var<T>, (h, w): (usize, usize)) -> Result<Var<T>> {
    let &[_, _, ph, pw] = x.shape() else {
        return Err(extent("crop", format!("expected (B, C, H, W), got {:?}", x.shape())));
    };
    if h > ph || w > pw {
        return Err(extent("crop", format!("{h}x{w} from {ph}x{pw}")));
    }
    if (h, w) == (ph, pw) {
        return Ok(x.clone());
    }
    Ok(x.slice(2, 0, h)?.slice(3, 0, w)?)
}

/// Tensor-level convenience for [`pad_to_multiple`].
pub fn pad_tensor<T: Elem>(x: &Tensor<T>, multiple: usize) -> Result<Tensor<T>> {
    Ok(pad_to_multiple(&Var::constant(x.clone()), multiple)?.0.value().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn already_aligned_is_unchanged() {
        let x = Var::constant(Tensor::<f32>::zeros([1, 3, 512, 768]));
        let (p, orig) = pad_to_multiple(&x, 64).unwrap();
        assert_eq!(p.shape(), &[1, 3, 512, 768]);
        assert_eq!(orig, (512, 768));
    }

    #[test]
    fn pads_to_next_multiple_and_crops_back() {
        let x = Var::constant(Tensor::from_fn([1, 3, 100, 100], |i| i as f32));
        let (p, orig) = pad_to_multiple(&x, 64).unwrap();
        assert_eq!(p.shape(), &[1, 3, 128, 128]);
        assert_eq!(orig, (100, 100));
        assert_eq!(crop(&p, orig).unwrap().value(), x.value());
    }

    #[test]
    fn reflection_mirrors_without_edge_repeat() {
        let x = Var::constant(Tensor::from_fn([1, 1, 1, 3], |i| i as f32));
        let (p, _) = pad_to_multiple(&x, 8).unwrap();
        // Columns 0 1 2 | 1 0 1 2 1, rows all reflect the single row.
        assert_eq!(&p.value().data()[..8], &[0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0]);
        assert_eq!(fold(63, 32), 1);
    }
}
