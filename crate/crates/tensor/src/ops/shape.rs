use std::rc::Rc;

use crate::elem::Elem;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;
use crate::var::Var;

/// Row-major strides of `shape`.
pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Builds a gather index by visiting every output multi-index in row-major
/// order and asking `source` for the flat input offset it reads.
pub fn build_index(out_shape: &[usize], mut source: impl FnMut(&[usize]) -> usize) -> Vec<usize> {
    let numel: usize = out_shape.iter().product();
    let mut index = Vec::with_capacity(numel);
    let mut pos = vec![0usize; out_shape.len()];
    for _ in 0..numel {
        index.push(source(&pos));
        for d in (0..pos.len()).rev() {
            pos[d] += 1;
            if pos[d] < out_shape[d] {
                break;
            }
            pos[d] = 0;
        }
    }
    index
}

impl<T: Elem> Var<T> {
    /// `out[i] = self[index[i]]`. Indices may repeat (broadcast) or skip
    /// elements; the backward pass scatter-adds.
    pub fn gather(&self, index: Rc<[usize]>, out_shape: impl Into<Vec<usize>>) -> Result<Var<T>> {
        let out_shape = out_shape.into();
        let numel: usize = out_shape.iter().product();
        if numel != index.len() {
            return Err(shape_err(
                "gather",
                format!("index of length {} for output {out_shape:?}", index.len()),
            ));
        }
        let src = self.value().data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(invalid("gather", format!("index {bad} out of range {}", src.len())));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let out = Tensor::new(out_shape, data)?;
        let in_shape = self.shape().to_vec();
        Var::from_op(
            "gather",
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = Tensor::zeros(in_shape.clone());
                let gxd = gx.data_mut();
                for (&i, &gv) in index.iter().zip(g.data()) {
                    gxd[i] = gxd[i] + gv;
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<T>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(invalid("permute", format!("axes {axes:?} for rank {}", shape.len())));
        }
        let strides = row_major_strides(shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let perm_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
        let index = build_index(&out_shape, |pos| {
            pos.iter().zip(&perm_strides).map(|(p, s)| p * s).sum()
        });
        self.gather(index.into(), out_shape)
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<T>], axis: usize) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(invalid("concat", format!("axis {axis} for rank {rank}")));
        }
        for p in parts {
            let ok = p.shape().len() == rank
                && p.shape().iter().zip(first.shape()).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(shape_err("concat", format!("{:?} vs {:?} on axis {axis}", p.shape(), first.shape())));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.value().data()[o * w..(o + 1) * w]);
            }
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total / inner;
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        Var::from_op(
            "concat",
            Tensor::new(out_shape, data)?,
            parts.to_vec(),
            Box::new(move |g, _, _| {
                let gd = g.data();
                let mut grads: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(w * outer)).collect();
                for o in 0..outer {
                    let mut off = o * total;
                    for (gp, &w) in grads.iter_mut().zip(&widths) {
                        gp.extend_from_slice(&gd[off..off + w]);
                        off += w;
                    }
                }
                grads
                    .into_iter()
                    .zip(&shapes)
                    .map(|(d, s)| Some(Tensor::new(s.clone(), d).expect("shape")))
                    .collect()
            }),
        )
    }

    /// The sub-range `[start, start + len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(invalid("slice", format!("[{start}, {}) of axis {axis} in {shape:?}", start + len)));
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let strides = row_major_strides(shape);
        let index = build_index(&out_shape, |pos| {
            pos.iter()
                .zip(&strides)
                .enumerate()
                .map(|(d, (&p, &s))| if d == axis { (p + start) * s } else { p * s })
                .sum()
        });
        self.gather(index.into(), out_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Var<f64> {
        Var::constant(Tensor::from_fn(shape.to_vec(), |i| i as f64))
    }

    #[test]
    fn permute_transposes() {
        let x = ramp(&[2, 3]);
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.value().data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = ramp(&[2, 2, 3]);
        let b = ramp(&[2, 1, 3]);
        let c = Var::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.slice(1, 0, 2).unwrap().value(), a.value());
        assert_eq!(c.slice(1, 2, 1).unwrap().value(), b.value());
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let x = ramp(&[3]);
        assert!(x.gather(vec![0, 3].into(), [2]).is_err());
    }
}
