//! 2-D convolution and transposed convolution over NCHW tensors via
//! im2col + GEMM.

use crate::elem::{strides, Elem};
use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;
use crate::var::Var;

/// Zero padding per side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn same(p: usize) -> Self {
        Self { top: p, bottom: p, left: p, right: p }
    }
}

impl From<usize> for Padding {
    fn from(p: usize) -> Self {
        Self::same(p)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: impl Into<Padding>, groups: usize) -> Self {
        Self { stride, padding: padding.into(), groups }
    }
}

/// Geometry of a single-image convolution from `(h, w)` to `(oh, ow)`.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: Padding,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(h: usize, w: usize, k: usize, stride: usize, pad: Padding) -> Option<Self> {
        let ph = h + pad.top + pad.bottom;
        let pw = w + pad.left + pad.right;
        if stride == 0 || ph < k || pw < k {
            return None;
        }
        Some(Self { h, w, k, stride, pad, oh: (ph - k) / stride + 1, ow: (pw - k) / stride + 1 })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == Padding::default()
    }

    /// Input coordinate read by output `o` at kernel tap `t`, if inside.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + t) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// `channels` planes of `x` (each `h·w`) into a `(channels·k·k, oh·ow)` matrix.
    fn im2col<T: Elem>(&self, x: &[T], channels: usize, cols: &mut [T]) {
        let (k, ohw) = (self.k, self.oh * self.ow);
        for c in 0..channels {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((c * k + ki) * k + kj) * ohw..][..ohw];
                    for oy in 0..self.oh {
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        match Self::src(oy, ki, self.stride, self.pad.top, self.h) {
                            None => dst.fill(T::zero()),
                            Some(iy) => {
                                let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = match Self::src(ox, kj, self.stride, self.pad.left, self.w) {
                                        Some(ix) => src_row[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds columns into planes.
    fn col2im<T: Elem>(&self, cols: &[T], channels: usize, x: &mut [T]) {
        let (k, ohw) = (self.k, self.oh * self.ow);
        for c in 0..channels {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((c * k + ki) * k + kj) * ohw..][..ohw];
                    for oy in 0..self.oh {
                        let Some(iy) = Self::src(oy, ki, self.stride, self.pad.top, self.h) else {
                            continue;
                        };
                        let dst_row = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for (ox, &v) in row[oy * self.ow..(oy + 1) * self.ow].iter().enumerate() {
                            if let Some(ix) = Self::src(ox, kj, self.stride, self.pad.left, self.w) {
                                dst_row[ix] = dst_row[ix] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn dims4(op: &'static str, t: &[usize]) -> Result<[usize; 4]> {
    t.try_into().map_err(|_| shape_err(op, format!("expected rank 4, got {t:?}")))
}

fn add_bias<T: Elem>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_exact_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn bias_grad<T: Elem>(g: &Tensor<T>, channels: usize, plane: usize) -> Tensor<T> {
    let mut gb = vec![T::zero(); channels];
    for (i, chunk) in g.data().chunks_exact(plane).enumerate() {
        gb[i % channels] = gb[i % channels] + chunk.iter().copied().sum();
    }
    Tensor::new(vec![channels], gb).expect("shape")
}

impl<T: Elem> Var<T> {
    /// Cross-correlation of `(B, C, H, W)` input with `(O, C/groups, k, k)` weights.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, spec: Conv2dSpec) -> Result<Var<T>> {
        const OP: &str = "conv2d";
        let [b, c, h, w] = dims4(OP, self.shape())?;
        let [o, cg, k, k2] = dims4(OP, weight.shape())?;
        let groups = spec.groups;
        if groups == 0 || c % groups != 0 || o % groups != 0 {
            return Err(shape_err(OP, format!("{c} input / {o} output channels not divisible by {groups} groups")));
        }
        if cg != c / groups || k != k2 {
            return Err(shape_err(OP, format!("weight {:?} for input {:?} with {groups} groups", weight.shape(), self.shape())));
        }
        if let Some(bv) = bias {
            if bv.shape() != [o] {
                return Err(shape_err(OP, format!("bias {:?} for {o} channels", bv.shape())));
            }
        }
        let geo = Geometry::new(h, w, k, spec.stride, spec.padding)
            .ok_or_else(|| invalid(OP, format!("kernel {k} stride {} does not fit {h}x{w}", spec.stride)))?;
        let og = o / groups;
        let (ohw, ckk) = (geo.oh * geo.ow, cg * k * k);
        let mut out = vec![T::zero(); b * o * ohw];
        let mut cols = vec![T::zero(); if geo.is_pointwise() { 0 } else { ckk * ohw }];
        let x = self.value().data();
        let wd = weight.value().data();
        for bi in 0..b {
            for g in 0..groups {
                let xg = &x[(bi * c + g * cg) * h * w..][..cg * h * w];
                let colm: &[T] = if geo.is_pointwise() {
                    xg
                } else {
                    geo.im2col(xg, cg, &mut cols);
                    &cols
                };
                T::gemm(
                    og,
                    ckk,
                    ohw,
                    &wd[g * og * ckk..][..og * ckk],
                    strides(ckk, false),
                    colm,
                    strides(ohw, false),
                    T::zero(),
                    &mut out[(bi * o + g * og) * ohw..][..og * ohw],
                );
            }
        }
        if let Some(bv) = bias {
            add_bias(&mut out, bv.value().data(), ohw);
        }
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Var::from_op(
            OP,
            Tensor::new(vec![b, o, geo.oh, geo.ow], out)?,
            parents,
            Box::new(move |gy, p, _| {
                let x = p[0].value().data();
                let wd = p[1].value().data();
                let gyd = gy.data();
                let need_x = p[0].requires_grad();
                let need_w = p[1].requires_grad();
                let mut gx = vec![T::zero(); if need_x { b * c * h * w } else { 0 }];
                let mut gw = vec![T::zero(); if need_w { o * ckk } else { 0 }];
                let mut cols = vec![T::zero(); ckk * ohw];
                for bi in 0..b {
                    for g in 0..groups {
                        let gyg = &gyd[(bi * o + g * og) * ohw..][..og * ohw];
                        if need_w {
                            let xg = &x[(bi * c + g * cg) * h * w..][..cg * h * w];
                            let colm: &[T] = if geo.is_pointwise() {
                                xg
                            } else {
                                geo.im2col(xg, cg, &mut cols);
                                &cols
                            };
                            T::gemm(
                                og,
                                ohw,
                                ckk,
                                gyg,
                                strides(ohw, false),
                                colm,
                                strides(ohw, true),
                                T::one(),
                                &mut gw[g * og * ckk..][..og * ckk],
                            );
                        }
                        if need_x {
                            let dst = &mut gx[(bi * c + g * cg) * h * w..][..cg * h * w];
                            if geo.is_pointwise() {
                                T::gemm(ckk, og, ohw, &wd[g * og * ckk..][..og * ckk], strides(ckk, true), gyg, strides(ohw, false), T::one(), dst);
                            } else {
                                T::gemm(ckk, og, ohw, &wd[g * og * ckk..][..og * ckk], strides(ckk, true), gyg, strides(ohw, false), T::zero(), &mut cols);
                                geo.col2im(&cols, cg, dst);
                            }
                        }
                    }
                }
                let mut grads = vec![
                    need_x.then(|| Tensor::new(vec![b, c, h, w], gx).expect("shape")),
                    need_w.then(|| Tensor::new(vec![o, cg, k, k], gw).expect("shape")),
                ];
                if p.len() == 3 {
                    grads.push(Some(bias_grad(gy, o, ohw)));
                }
                grads
            }),
        )
    }

    /// Transposed convolution (the adjoint of [`conv2d`](Self::conv2d) with the
    /// same stride/padding), weights `(C_in, C_out, k, k)`. Output extent is
    /// `(H − 1)·stride − pad + k`.
    pub fn conv_transpose2d(
        &self,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        stride: usize,
        padding: impl Into<Padding>,
    ) -> Result<Var<T>> {
        const OP: &str = "conv_transpose2d";
        let pad = padding.into();
        let [b, c, h, w] = dims4(OP, self.shape())?;
        let [ci, o, k, k2] = dims4(OP, weight.shape())?;
        if ci != c || k != k2 {
            return Err(shape_err(OP, format!("weight {:?} for input {:?}", weight.shape(), self.shape())));
        }
        if let Some(bv) = bias {
            if bv.shape() != [o] {
                return Err(shape_err(OP, format!("bias {:?} for {o} channels", bv.shape())));
            }
        }
        let oh = ((h - 1) * stride + k).checked_sub(pad.top + pad.bottom);
        let ow = ((w - 1) * stride + k).checked_sub(pad.left + pad.right);
        let geo = match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Geometry::new(oh, ow, k, stride, pad),
            _ => None,
        }
        .filter(|g| g.oh == h && g.ow == w)
        .ok_or_else(|| invalid(OP, format!("kernel {k} stride {stride} padding {pad:?} invalid for {h}x{w}")))?;
        let (hw, okk, out_plane) = (h * w, o * k * k, geo.h * geo.w);
        let mut out = vec![T::zero(); b * o * out_plane];
        let mut cols = vec![T::zero(); okk * hw];
        let x = self.value().data();
        let wd = weight.value().data();
        for bi in 0..b {
            T::gemm(okk, c, hw, wd, strides(okk, true), &x[bi * c * hw..][..c * hw], strides(hw, false), T::zero(), &mut cols);
            geo.col2im(&cols, o, &mut out[bi * o * out_plane..][..o * out_plane]);
        }
        if let Some(bv) = bias {
            add_bias(&mut out, bv.value().data(), out_plane);
        }
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Var::from_op(
            OP,
            Tensor::new(vec![b, o, geo.h, geo.w], out)?,
            parents,
            Box::new(move |gy, p, _| {
                let x = p[0].value().data();
                let wd = p[1].value().data();
                let need_x = p[0].requires_grad();
                let need_w = p[1].requires_grad();
                let mut gx = vec![T::zero(); if need_x { b * c * hw } else { 0 }];
                let mut gw = vec![T::zero(); if need_w { c * okk } else { 0 }];
                let mut cols = vec![T::zero(); okk * hw];
                for bi in 0..b {
                    geo.im2col(&gy.data()[bi * o * out_plane..][..o * out_plane], o, &mut cols);
                    if need_x {
                        T::gemm(c, okk, hw, wd, strides(okk, false), &cols, strides(hw, false), T::zero(), &mut gx[bi * c * hw..][..c * hw]);
                    }
                    if need_w {
                        T::gemm(c, hw, okk, &x[bi * c * hw..][..c * hw], strides(hw, false), &cols, strides(hw, true), T::one(), &mut gw);
                    }
                }
                let mut grads = vec![
                    need_x.then(|| Tensor::new(vec![b, c, h, w], gx).expect("shape")),
                    need_w.then(|| Tensor::new(vec![c, o, k, k], gw).expect("shape")),
                ];
                if p.len() == 3 {
                    grads.push(Some(bias_grad(gy, o, out_plane)));
                }
                grads
            }),
        )
    }

    /// Non-overlapping `k×k` mean pooling over NCHW.
    pub fn avg_pool2d(&self, k: usize) -> Result<Var<T>> {
        const OP: &str = "avg_pool2d";
        let [b, c, h, w] = dims4(OP, self.shape())?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(shape_err(OP, format!("{h}x{w} not divisible by {k}")));
        }
        let (oh, ow) = (h / k, w / k);
        let inv = T::of(1.0 / (k * k) as f64);
        let x = self.value().data();
        let mut out = vec![T::zero(); b * c * oh * ow];
        for (plane, dst) in out.chunks_exact_mut(oh * ow).enumerate() {
            let src = &x[plane * h * w..][..h * w];
            for y in 0..h {
                for xx in 0..w {
                    let d = &mut dst[(y / k) * ow + xx / k];
                    *d = *d + src[y * w + xx];
                }
            }
            for d in dst.iter_mut() {
                *d = *d * inv;
            }
        }
        Var::from_op(
            OP,
            Tensor::new(vec![b, c, oh, ow], out)?,
            vec![self.clone()],
            Box::new(move |gy, _, _| {
                let mut gx = vec![T::zero(); b * c * h * w];
                for (plane, src) in gy.data().chunks_exact(oh * ow).enumerate() {
                    let dst = &mut gx[plane * h * w..][..h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[y * w + xx] = src[(y / k) * ow + xx / k] * inv;
                        }
                    }
                }
                vec![Some(Tensor::new(vec![b, c, h, w], gx).expect("shape"))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation, independent of im2col.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, groups: usize) -> Tensor<f64> {
        let [b, _, h, wd] = <[usize; 4]>::try_from(x.shape()).unwrap();
        let [o, cg, k, _] = <[usize; 4]>::try_from(w.shape()).unwrap();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let og = o / groups;
        let mut out = Tensor::zeros([b, o, oh, ow]);
        for bi in 0..b {
            for oc in 0..o {
                let g = oc / og;
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..cg {
                            for i in 0..k {
                                for j in 0..k {
                                    let iy = (y * stride + i) as isize - pad as isize;
                                    let ix = (xx * stride + j) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.at(&[bi, g * cg + ic, iy as usize, ix as usize]) * w.at(&[oc, ic, i, j]);
                                }
                            }
                        }
                        let off = out.offset(&[bi, oc, y, xx]);
                        out.data_mut()[off] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed;
        Tensor::from_fn(shape.to_vec(), |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Var::constant(pseudo(&[1, 1, 3, 3], 1));
        let w = Var::constant(Tensor::ones([1, 1, 1, 1]));
        let y = x.conv2d(&w, None, Conv2dSpec::new(1, 0, 1)).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn depthwise_sum_of_ones() {
        let x = Var::constant(Tensor::<f64>::ones([1, 2, 2, 2]));
        let w = Var::constant(Tensor::ones([2, 1, 2, 2]));
        let y = x.conv2d(&w, None, Conv2dSpec::new(1, 0, 2)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.value().data(), &[4.0, 4.0]);
    }

    #[test]
    fn indivisible_groups_is_error() {
        let x = Var::constant(Tensor::<f64>::ones([1, 3, 4, 4]));
        let w = Var::constant(Tensor::ones([2, 1, 1, 1]));
        assert!(x.conv2d(&w, None, Conv2dSpec::new(1, 0, 2)).is_err());
    }

    #[test]
    fn matches_nested_loop_oracle() {
        for &(c, o, k, stride, pad, groups) in &[
            (3, 4, 3, 1, 1, 1),
            (4, 6, 3, 2, 1, 2),
            (4, 2, 2, 2, 0, 2),
            (2, 3, 5, 2, 2, 1),
            (3, 5, 1, 1, 0, 1),
        ] {
            let x = pseudo(&[2, c, 7, 6], 3);
            let w = pseudo(&[o, c / groups, k, k], 5);
            let got = Var::constant(x.clone())
                .conv2d(&Var::constant(w.clone()), None, Conv2dSpec::new(stride, pad, groups))
                .unwrap();
            let want = conv_oracle(&x, &w, stride, pad, groups);
            assert_eq!(got.shape(), want.shape());
            assert!(got.value().max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> for matching stride/padding.
        let x = pseudo(&[1, 3, 8, 8], 7);
        let w = pseudo(&[5, 3, 4, 4], 9);
        let wv = Var::constant(w);
        let cx = Var::constant(x.clone()).conv2d(&wv, None, Conv2dSpec::new(2, 1, 1)).unwrap();
        let y = pseudo(cx.shape(), 11);
        let ty = Var::constant(y.clone()).conv_transpose2d(&wv, None, 2, 1).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let lhs: f64 = cx.value().data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.value().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_examples() {
        let x = Var::constant(Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(x.avg_pool2d(2).unwrap().value().data(), &[2.5]);
        let ramp = Var::constant(Tensor::<f64>::from_fn([1, 1, 4, 4], |i| i as f64));
        assert_eq!(ramp.avg_pool2d(2).unwrap().value().data(), &[2.5, 4.5, 10.5, 12.5]);
        assert!(ramp.avg_pool2d(3).is_err());
    }
}
