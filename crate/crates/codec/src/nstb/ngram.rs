//! Uni-gram embedding and the bidirectional N-gram window context.
//!
//! The context path runs at half resolution on half the channels. A sliding
//! `N×N` convolution summarizes each cell's forward neighborhood; the same
//! weights applied to the spatially flipped map give the backward
//! neighborhood. Both are average-pooled to one cell per attention window,
//! concatenated, and fused back to `D` channels by a `1×1` convolution.

use ngsc_tensor::ops::build_index;
use ngsc_tensor::{Conv2dSpec, Elem, Scope, Var};

use super::window::WindowGrid;
use crate::error::{extent, CodecError, Result};
use crate::layers::{Builder, Conv};

/// Kernel-2, stride-2 grouped convolution from `D` to `D/2` channels.
#[derive(Clone, Debug)]
pub struct UnigramEmbed {
    pub conv: Conv,
}

impl UnigramEmbed {
    pub fn new(b: &mut Builder, dim: usize) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(CodecError::Config(format!("uni-gram embedding needs an even width, got {dim}")));
        }
        let half = dim / 2;
        Ok(Self { conv: Conv::new(&mut b.sub("conv"), dim, half, 2, Conv2dSpec::new(2, 0, half), false)? })
    }

    /// `(B, D, H, W)` to `(B, D/2, H/2, W/2)`.
    pub fn forward<T: Elem>(&self, s: &Scope<T>, x: &Var<T>) -> Result<Var<T>> {
        let &[_, _, h, w] = x.shape() else {
            return Err(extent("unigram_embed", format!("expected (B, D, H, W), got {:?}", x.shape())));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(extent("unigram_embed", format!("odd extent {h}x{w}")));
        }
        self.conv.forward(s, x)
    }
}

#[derive(Clone, Debug)]
pub struct NGramContext {
    /// Shared sliding weights for both directions.
    pub sliding: Conv,
    /// `1×1` fusion of the concatenated directions to `D` channels.
    pub fuse: Conv,
    pub order: usize,
}

impl NGramContext {
    pub fn new(b: &mut Builder, dim: usize, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(CodecError::Config("N-gram order must be at least 1".into()));
        }
        let half = dim / 2;
        Ok(Self {
            sliding: Conv::new(&mut b.sub("sliding"), half, half, order, Conv2dSpec::new(1, 0, 1), true)?,
            fuse: Conv::new(&mut b.sub("fuse"), dim, dim, 1, Conv2dSpec::new(1, 0, 1), true)?,
            order,
        })
    }

    /// Forward-direction feature at uni-gram resolution.
    pub fn forward_feature<T: Elem>(&self, s: &Scope<T>, uni: &Var<T>) -> Result<Var<T>> {
        self.sliding.forward(s, &wrap_pad(uni, self.order - 1)?)
    }

    /// Backward-direction feature: flip, slide with the shared weights, flip back.
    pub fn backward_feature<T: Elem>(&self, s: &Scope<T>, uni: &Var<T>) -> Result<Var<T>> {
        flip_hw(&self.forward_feature(s, &flip_hw(uni)?)?)
    }

    /// `uni` is `(B, D/2, h, w)`; every `pool×pool` cell block becomes one
    /// context vector. Returns `(B, D, h/pool, w/pool)`.
    pub fn forward<T: Elem>(&self, s: &Scope<T>, uni: &Var<T>, pool: usize) -> Result<Var<T>> {
        let &[_, _, h, w] = uni.shape() else {
            return Err(extent("ngram_context", format!("expected (B, D/2, h, w), got {:?}", uni.shape())));
        };
        if pool == 0 || h % pool != 0 || w % pool != 0 {
            return Err(extent("ngram_context", format!("{h}x{w} not divisible by pooling {pool}")));
        }
        let fwd = self.forward_feature(s, uni)?.avg_pool2d(pool)?;
        let bwd = self.backward_feature(s, uni)?.avg_pool2d(pool)?;
        self.fuse.forward(s, &Var::concat(&[fwd, bwd], 1)?)
    }
}

/// Circular padding of `p` rows/columns at the bottom and right of `(B, C, H, W)`.
pub fn wrap_pad<T: Elem>(x: &Var<T>, p: usize) -> Result<Var<T>> {
    if p == 0 {
        return Ok(x.clone());
    }
    let &[b, c, h, w] = x.shape() else {
        return Err(extent("wrap_pad", format!("expected (B, C, H, W), got {:?}", x.shape())));
    };
    let shape = [b, c, h + p, w + p];
    let index = build_index(&shape, |pos| ((pos[0] * c + pos[1]) * h + pos[2] % h) * w + pos[3] % w);
    Ok(x.gather(index.into(), shape)?)
}

/// Reverses both spatial axes of `(B, C, H, W)`.
pub fn flip_hw<T: Elem>(x: &Var<T>) -> Result<Var<T>> {
    let &[b, c, h, w] = x.shape() else {
        return Err(extent("flip", format!("expected (B, C, H, W), got {:?}", x.shape())));
    };
    let shape = [b, c, h, w];
    let index = build_index(&shape, |pos| ((pos[0] * c + pos[1]) * h + h - 1 - pos[2]) * w + w - 1 - pos[3]);
    Ok(x.gather(index.into(), shape)?)
}

/// Nearest-neighbour broadcast of a `(B, h, w, D)` context to every pixel of
/// its `m×m` window in a `(B, h·m, w·m, D)` map.
pub fn broadcast_context<T: Elem>(ctx: &Var<T>, m: usize) -> Result<Var<T>> {
    let &[b, ch, cw, d] = ctx.shape() else {
        return Err(extent("window_sum", format!("expected (B, h, w, D), got {:?}", ctx.shape())));
    };
    let shape = [b, ch * m, cw * m, d];
    let index = build_index(&shape, |pos| ((pos[0] * ch + pos[1] / m) * cw + pos[2] / m) * d + pos[3]);
    Ok(ctx.gather(index.into(), shape)?)
}

/// Adds `ctx[w]` (`(B, H/M, W/M, D)`) to every token of window `w` of an
/// unshifted grid.
pub fn window_sum<T: Elem>(grid: &WindowGrid<T>, ctx: &Var<T>) -> Result<WindowGrid<T>> {
    let [b, h, w, d] = grid.origin_shape;
    let m = grid.window;
    if grid.shift != (0, 0) {
        return Err(extent("window_sum", "context aligns with the unshifted grid"));
    }
    if ctx.shape() != [b, h / m, w / m, d] {
        return Err(extent("window_sum", format!("context {:?} for grid {:?} / {m}", ctx.shape(), grid.origin_shape)));
    }
    let n = m * m;
    let shape = [b * (h / m) * (w / m), n, d];
    // Windows are already in the context's row-major order.
    let index = build_index(&shape, |pos| pos[0] * d + pos[2]);
    let spread = ctx.gather(index.into(), shape)?;
    Ok(grid.with_windows(grid.windows.add(&spread)?))
}
