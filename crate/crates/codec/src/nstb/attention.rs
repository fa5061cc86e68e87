//! Scaled-cosine window self-attention with learned key/value tokens.
//!
//! Per window and head, queries come from the window's `M²` image tokens;
//! keys and values come from those tokens followed by the image's `L`
//! learned tokens. Scores are `cos(qᵢ, kⱼ)/τ + B(i, j)` with `B = 0` on
//! learned-token columns.

use std::rc::Rc;

use ngsc_tensor::{Elem, ParamId, Scope, Tensor, Var};

use super::window::WindowGrid;
use crate::error::{extent, CodecError, Result};
use crate::layers::{Builder, Linear};

/// Floor added to τ so it never reaches zero.
pub const TAU_FLOOR: f64 = 0.01;
/// Initial temperature (scores span ±10 at init).
pub const TAU_INIT: f64 = 0.1;
/// Squared-norm regularizer inside the cosine normalization.
const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    /// `log(τ − 0.01)` per head.
    pub log_tau: ParamId,
    /// `(heads, (2M − 1)²)` relative position biases.
    pub bias_table: ParamId,
    pub heads: usize,
    /// Largest window size the bias table covers.
    pub max_window: usize,
    pub dim: usize,
}

impl WindowAttention {
    pub fn new(b: &mut Builder, dim: usize, heads: usize, max_window: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(CodecError::Config(format!("dim {dim} not divisible by {heads} heads")));
        }
        let span = 2 * max_window - 1;
        let log_tau = (TAU_INIT - TAU_FLOOR).ln() as f32;
        Ok(Self {
            qkv: Linear::new(&mut b.sub("qkv"), dim, 3 * dim, true)?,
            proj: Linear::new(&mut b.sub("proj"), dim, dim, true)?,
            log_tau: b.full("log_tau", &[heads], log_tau)?,
            bias_table: b.uniform("bias_table", &[heads, span * span], 0.02)?,
            heads,
            max_window,
            dim,
        })
    }

    /// `τ = exp(log_tau) + 0.01` per head.
    pub fn tau<T: Elem>(&self, s: &Scope<T>) -> Result<Var<T>> {
        Ok(s.param(self.log_tau).exp()?.add_scalar(TAU_FLOOR)?)
    }

    /// Relative position bias `(heads, M², M²)` for window size `m`.
    pub fn position_bias<T: Elem>(&self, s: &Scope<T>, m: usize) -> Result<Var<T>> {
        if m > self.max_window {
            return Err(extent("attention", format!("window {m} exceeds bias table for {}", self.max_window)));
        }
        let rel = relative_index(m, self.max_window);
        let entries = (2 * self.max_window - 1).pow(2);
        let n = m * m;
        let index: Vec<usize> = (0..self.heads)
            .flat_map(|h| rel.iter().map(move |&r| h * entries + r))
            .collect();
        Ok(s.param(self.bias_table).gather(index.into(), [self.heads, n, n])?)
    }

    /// Attention over every window of `grid`; `tokens` is `(B, L, D)`.
    pub fn forward<T: Elem>(&self, s: &Scope<T>, grid: &WindowGrid<T>, tokens: Option<&Var<T>>) -> Result<WindowGrid<T>> {
        let qkv = self.qkv.forward(s, &grid.windows)?;
        let token_qkv = tokens.map(|t| self.qkv.forward(s, t)).transpose()?;
        let tau = self.tau(s)?;
        let bias = self.position_bias(s, grid.window)?;
        let out = cosine_window_attention(&qkv, token_qkv.as_ref(), &tau, &bias, self.heads, grid.windows_per_image())?;
        Ok(grid.with_windows(self.proj.forward(s, &out)?))
    }
}

/// Index into a `(2M − 1)²` bias table for every query/key pair of an
/// `m×m` window (`m ≤ M`), row-major over `(query, key)`.
pub fn relative_index(m: usize, max_window: usize) -> Vec<usize> {
    let span = 2 * max_window - 1;
    let n = m * m;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let dy = (i / m) as isize - (j / m) as isize + max_window as isize - 1;
            let dx = (i % m) as isize - (j % m) as isize + max_window as isize - 1;
            out.push(dy as usize * span + dx as usize);
        }
    }
    out
}

/// Shapes shared by the forward and backward kernels.
#[derive(Clone, Copy)]
struct Dims {
    windows: usize,
    n: usize,
    lt: usize,
    heads: usize,
    hd: usize,
    dim: usize,
    per_image: usize,
}

impl Dims {
    fn keys(&self) -> usize {
        self.n + self.lt
    }
}

/// Normalized queries/keys, raw values and norms for one (window, head).
struct HeadView {
    qn: Vec<f64>,
    kn: Vec<f64>,
    v: Vec<f64>,
    q_norm: Vec<f64>,
    k_norm: Vec<f64>,
}

fn normalize_into(src: &[f64], dst: &mut [f64]) -> f64 {
    let r = (src.iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt();
    for (d, s) in dst.iter_mut().zip(src) {
        *d = s / r;
    }
    r
}

fn head_view<T: Elem>(qkv: &[T], lt_qkv: Option<&[T]>, dims: &Dims, w: usize, h: usize) -> HeadView {
    let Dims { n, hd, dim, .. } = *dims;
    let keys = dims.keys();
    let mut view = HeadView {
        qn: vec![0.0; n * hd],
        kn: vec![0.0; keys * hd],
        v: vec![0.0; keys * hd],
        q_norm: vec![0.0; n],
        k_norm: vec![0.0; keys],
    };
    let mut buf = vec![0.0; hd];
    let b = w / dims.per_image;
    for j in 0..keys {
        let row: &[T] = if j < n {
            &qkv[(w * n + j) * 3 * dim..][..3 * dim]
        } else {
            &lt_qkv.expect("learned tokens")[(b * dims.lt + j - n) * 3 * dim..][..3 * dim]
        };
        if j < n {
            for (x, &r) in buf.iter_mut().zip(&row[h * hd..(h + 1) * hd]) {
                *x = r.to_f64_lossless();
            }
            view.q_norm[j] = normalize_into(&buf, &mut view.qn[j * hd..(j + 1) * hd]);
        }
        for (x, &r) in buf.iter_mut().zip(&row[dim + h * hd..dim + (h + 1) * hd]) {
            *x = r.to_f64_lossless();
        }
        view.k_norm[j] = normalize_into(&buf, &mut view.kn[j * hd..(j + 1) * hd]);
        for (x, &r) in view.v[j * hd..(j + 1) * hd].iter_mut().zip(&row[2 * dim + h * hd..2 * dim + (h + 1) * hd]) {
            *x = r.to_f64_lossless();
        }
    }
    view
}

/// Row-softmaxed scores `(n, keys)` and the raw cosine matrix.
fn scores(view: &HeadView, dims: &Dims, inv_tau: f64, bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, keys, hd) = (dims.n, dims.keys(), dims.hd);
    let mut cos = vec![0.0; n * keys];
    let mut p = vec![0.0; n * keys];
    for i in 0..n {
        let q = &view.qn[i * hd..(i + 1) * hd];
        let mut max = f64::NEG_INFINITY;
        for j in 0..keys {
            let k = &view.kn[j * hd..(j + 1) * hd];
            let c: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
            cos[i * keys + j] = c;
            let s = c * inv_tau + if j < n { bias[i * n + j] } else { 0.0 };
            p[i * keys + j] = s;
            max = max.max(s);
        }
        let row = &mut p[i * keys..(i + 1) * keys];
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    (p, cos)
}

/// Fused scaled-cosine attention kernel.
///
/// * `qkv`: `(windows, n, 3D)` projected image tokens.
/// * `lt_qkv`: `(B, L, 3D)` projected learned tokens; window `w` uses image
///   `w / per_image`. Only their key and value parts are read.
/// * `tau`: `(heads,)`, all positive.
/// * `bias`: `(heads, n, n)`.
///
/// Returns `(windows, n, D)` with heads concatenated along channels.
pub fn cosine_window_attention<T: Elem>(
    qkv: &Var<T>,
    lt_qkv: Option<&Var<T>>,
    tau: &Var<T>,
    bias: &Var<T>,
    heads: usize,
    per_image: usize,
) -> Result<Var<T>> {
    const OP: &str = "scaled_cosine_attention";
    let &[windows, n, three_d] = qkv.shape() else {
        return Err(extent(OP, format!("qkv must be (windows, n, 3D), got {:?}", qkv.shape())));
    };
    if three_d % 3 != 0 || heads == 0 || (three_d / 3) % heads != 0 {
        return Err(extent(OP, format!("{three_d} qkv channels with {heads} heads")));
    }
    let dim = three_d / 3;
    if per_image == 0 || windows % per_image != 0 {
        return Err(extent(OP, format!("{windows} windows, {per_image} per image")));
    }
    let batch = windows / per_image;
    let lt = match lt_qkv {
        None => 0,
        Some(t) => match *t.shape() {
            [b, l, c] if b == batch && c == three_d => l,
            _ => return Err(extent(OP, format!("learned tokens {:?} for batch {batch}, {three_d} channels", t.shape()))),
        },
    };
    if tau.shape() != [heads] {
        return Err(extent(OP, format!("tau {:?} for {heads} heads", tau.shape())));
    }
    if tau.value().data().iter().any(|t| *t <= T::zero()) {
        return Err(CodecError::Config("attention temperature must be positive".into()));
    }
    if bias.shape() != [heads, n, n] {
        return Err(extent(OP, format!("bias {:?} for {heads} heads and {n} tokens", bias.shape())));
    }
    let dims = Dims { windows, n, lt, heads, hd: dim / heads, dim, per_image };

    let taus: Rc<[f64]> = tau.value().data().iter().map(|t| t.to_f64_lossless()).collect();
    let biases: Rc<[f64]> = bias.value().data().iter().map(|b| b.to_f64_lossless()).collect();
    let mut out = vec![T::zero(); windows * n * dim];
    {
        let qkv_d = qkv.value().data();
        let lt_d = lt_qkv.map(|t| t.value().data());
        for w in 0..windows {
            for h in 0..heads {
                let view = head_view(qkv_d, lt_d, &dims, w, h);
                let (p, _) = scores(&view, &dims, 1.0 / taus[h], &biases[h * n * n..(h + 1) * n * n]);
                let keys = dims.keys();
                for i in 0..n {
                    let dst = &mut out[(w * n + i) * dim + h * dims.hd..][..dims.hd];
                    for (c, o) in dst.iter_mut().enumerate() {
                        let acc: f64 = (0..keys).map(|j| p[i * keys + j] * view.v[j * dims.hd + c]).sum();
                        *o = T::of(acc);
                    }
                }
            }
        }
    }

    let mut parents = vec![qkv.clone(), tau.clone(), bias.clone()];
    parents.extend(lt_qkv.cloned());
    Var::from_op(
        OP,
        Tensor::new(vec![windows, n, dim], out)?,
        parents,
        Box::new(move |g, p, _| attention_backward(g, p, &dims, &taus, &biases)),
    )
    .map_err(Into::into)
}

fn attention_backward<T: Elem>(
    g: &Tensor<T>,
    parents: &[Var<T>],
    dims: &Dims,
    taus: &[f64],
    biases: &[f64],
) -> Vec<Option<Tensor<T>>> {
    let Dims { windows, n, lt, heads, hd, dim, per_image } = *dims;
    let keys = dims.keys();
    let qkv_d = parents[0].value().data();
    let lt_d = parents.get(3).map(|t| t.value().data());
    let gd = g.data();
    let mut g_qkv = vec![0.0f64; windows * n * 3 * dim];
    let mut g_lt = vec![0.0f64; (windows / per_image) * lt * 3 * dim];
    let mut g_tau = vec![0.0f64; heads];
    let mut g_bias = vec![0.0f64; heads * n * n];

    let mut dp = vec![0.0; n * keys];
    let mut dqn = vec![0.0; n * hd];
    let mut dkn = vec![0.0; keys * hd];
    let mut dv = vec![0.0; keys * hd];
    for w in 0..windows {
        let b = w / per_image;
        for h in 0..heads {
            let view = head_view(qkv_d, lt_d, dims, w, h);
            let inv_tau = 1.0 / taus[h];
            let (p, cos) = scores(&view, dims, inv_tau, &biases[h * n * n..(h + 1) * n * n]);
            dqn.fill(0.0);
            dkn.fill(0.0);
            dv.fill(0.0);
            for i in 0..n {
                let go = &gd[(w * n + i) * dim + h * hd..][..hd];
                let go: Vec<f64> = go.iter().map(|x| x.to_f64_lossless()).collect();
                let mut dot = 0.0;
                for j in 0..keys {
                    let vj = &view.v[j * hd..(j + 1) * hd];
                    let d: f64 = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dp[i * keys + j] = d;
                    dot += d * p[i * keys + j];
                    let pij = p[i * keys + j];
                    for (acc, &o) in dv[j * hd..(j + 1) * hd].iter_mut().zip(&go) {
                        *acc += pij * o;
                    }
                }
                for j in 0..keys {
                    let ds = p[i * keys + j] * (dp[i * keys + j] - dot);
                    if j < n {
                        g_bias[(h * n + i) * n + j] += ds;
                    }
                    g_tau[h] -= ds * cos[i * keys + j] * inv_tau * inv_tau;
                    let dc = ds * inv_tau;
                    let (qi, kj) = (&view.qn[i * hd..(i + 1) * hd], &view.kn[j * hd..(j + 1) * hd]);
                    for c in 0..hd {
                        dqn[i * hd + c] += dc * kj[c];
                        dkn[j * hd + c] += dc * qi[c];
                    }
                }
            }
            // Back through the normalization: dx = (dx̂ − x̂·(x̂·dx̂)) / ‖x‖.
            let unnormalize = |xn: &[f64], dxn: &[f64], r: f64, dst: &mut [f64]| {
                let proj: f64 = xn.iter().zip(dxn).map(|(a, b)| a * b).sum();
                for c in 0..xn.len() {
                    dst[c] += (dxn[c] - xn[c] * proj) / r;
                }
            };
            for i in 0..n {
                let dst = &mut g_qkv[(w * n + i) * 3 * dim + h * hd..][..hd];
                unnormalize(&view.qn[i * hd..(i + 1) * hd], &dqn[i * hd..(i + 1) * hd], view.q_norm[i], dst);
            }
            for j in 0..keys {
                let base = if j < n { (w * n + j) * 3 * dim } else { (b * lt + j - n) * 3 * dim };
                let target = if j < n { &mut g_qkv } else { &mut g_lt };
                unnormalize(
                    &view.kn[j * hd..(j + 1) * hd],
                    &dkn[j * hd..(j + 1) * hd],
                    view.k_norm[j],
                    &mut target[base + dim + h * hd..][..hd],
                );
                for (acc, &d) in target[base + 2 * dim + h * hd..][..hd].iter_mut().zip(&dv[j * hd..(j + 1) * hd]) {
                    *acc += d;
                }
            }
        }
    }
    let cast = |v: Vec<f64>, shape: &[usize]| Tensor::new(shape.to_vec(), v.into_iter().map(T::of).collect()).expect("shape");
    let mut grads = vec![
        Some(cast(g_qkv, parents[0].shape())),
        Some(cast(g_tau, parents[1].shape())),
        Some(cast(g_bias, parents[2].shape())),
    ];
    if let Some(t) = parents.get(3) {
        grads.push(Some(cast(g_lt, t.shape())));
    }
    grads
}
