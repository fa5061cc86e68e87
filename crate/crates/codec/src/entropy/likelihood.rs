//! Differentiable interval masses of the latent probability models.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ngsc_tensor::{Elem, Tensor, Var};

use crate::error::{extent, Result};

/// Lower bound on any modelled symbol probability.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;
/// Lower bound on the Gaussian scale.
pub const SIGMA_FLOOR: f64 = 0.04;

fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Upper tail `P(X > t)` of the standard normal.
fn normal_upper(t: f64) -> f64 {
    0.5 * libm::erfc(t * FRAC_1_SQRT_2)
}

/// Mass of `[δ − ½, δ + ½]` under `N(0, σ²)`, computed from the upper tail
/// so large `|δ|` keeps relative precision.
pub fn gaussian_mass(delta: f64, sigma: f64) -> f64 {
    let d = delta.abs();
    normal_upper((d - 0.5) / sigma) - normal_upper((d + 0.5) / sigma)
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mass of `[δ − ½, δ + ½]` under a zero-centred logistic of scale `scale`.
pub fn logistic_mass(delta: f64, scale: f64) -> f64 {
    let d = delta.abs();
    sigmoid((0.5 - d) / scale) - sigmoid((-0.5 - d) / scale)
}

/// `P(ŷ | μ, σ)` elementwise, floored at [`LIKELIHOOD_FLOOR`]; `σ` is clamped
/// to [`SIGMA_FLOOR`]. Floored or clamped entries pass no gradient through
/// the affected input.
pub fn gaussian_likelihood<T: Elem>(y: &Var<T>, mu: &Var<T>, sigma: &Var<T>) -> Result<Var<T>> {
    if y.shape() != mu.shape() || y.shape() != sigma.shape() {
        return Err(extent(
            "likelihood_y",
            format!("y {:?}, mu {:?}, sigma {:?}", y.shape(), mu.shape(), sigma.shape()),
        ));
    }
    let n = y.value().numel();
    // Per element: (p, ∂p/∂δ, ∂p/∂σ).
    let mut p = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for ((&yv, &m), &sg) in y.value().data().iter().zip(mu.value().data()).zip(sigma.value().data()) {
        let delta = yv.to_f64_lossless() - m.to_f64_lossless();
        let raw_sigma = sg.to_f64_lossless();
        let s = raw_sigma.max(SIGMA_FLOOR);
        let mass = gaussian_mass(delta, s);
        if mass < LIKELIHOOD_FLOOR {
            p.push(T::of(LIKELIHOOD_FLOOR));
            grads.push((0.0, 0.0));
            continue;
        }
        let (a, b) = ((delta + 0.5) / s, (delta - 0.5) / s);
        let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
        let d_delta = (pa - pb) / s;
        let d_sigma = if raw_sigma < SIGMA_FLOOR { 0.0 } else { -(a * pa - b * pb) / s };
        p.push(T::of(mass));
        grads.push((d_delta, d_sigma));
    }
    Var::from_op(
        "likelihood_y",
        Tensor::new(y.shape().to_vec(), p)?,
        vec![y.clone(), mu.clone(), sigma.clone()],
        Box::new(move |g, parents, _| {
            let shape = parents[0].shape().to_vec();
            let (mut gy, mut gm, mut gs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for (&go, &(dd, ds)) in g.data().iter().zip(&grads) {
                let go = go.to_f64_lossless();
                gy.push(T::of(go * dd));
                gm.push(T::of(-go * dd));
                gs.push(T::of(go * ds));
            }
            let t = |v| Some(Tensor::new(shape.clone(), v).expect("shape"));
            vec![t(gy), t(gm), t(gs)]
        }),
    )
    .map_err(Into::into)
}

/// `P(ẑ)` under a per-channel logistic with location `loc` and
/// `log_scale`, both `(C,)`, for `z` of shape `(B, C, H, W)`.
pub fn logistic_likelihood<T: Elem>(z: &Var<T>, loc: &Var<T>, log_scale: &Var<T>) -> Result<Var<T>> {
    let &[b, c, h, w] = z.shape() else {
        return Err(extent("likelihood_z", format!("expected (B, C, H, W), got {:?}", z.shape())));
    };
    if loc.shape() != [c] || log_scale.shape() != [c] {
        return Err(extent("likelihood_z", format!("prior {:?}/{:?} for {c} channels", loc.shape(), log_scale.shape())));
    }
    let plane = h * w;
    let n = b * c * plane;
    let mut p = Vec::with_capacity(n);
    // Per element: (∂p/∂δ, ∂p/∂log_scale).
    let mut grads = Vec::with_capacity(n);
    let dsig = |t: f64| {
        let s = sigmoid(t);
        s * (1.0 - s)
    };
    for (i, &zv) in z.value().data().iter().enumerate() {
        let ch = (i / plane) % c;
        let scale = log_scale.value().data()[ch].to_f64_lossless().exp();
        let delta = zv.to_f64_lossless() - loc.value().data()[ch].to_f64_lossless();
        let mass = logistic_mass(delta, scale);
        if mass < LIKELIHOOD_FLOOR {
            p.push(T::of(LIKELIHOOD_FLOOR));
            grads.push((0.0, 0.0));
            continue;
        }
        let (a, bb) = ((delta + 0.5) / scale, (delta - 0.5) / scale);
        let (da, db) = (dsig(a), dsig(bb));
        p.push(T::of(mass));
        grads.push(((da - db) / scale, -(a * da - bb * db)));
    }
    Var::from_op(
        "likelihood_z",
        Tensor::new(z.shape().to_vec(), p)?,
        vec![z.clone(), loc.clone(), log_scale.clone()],
        Box::new(move |g, parents, _| {
            let mut gz = Vec::with_capacity(n);
            let mut gl = vec![0.0f64; c];
            let mut gs = vec![0.0f64; c];
            for (i, (&go, &(dd, ds))) in g.data().iter().zip(&grads).enumerate() {
                let go = go.to_f64_lossless();
                let ch = (i / plane) % c;
                gz.push(T::of(go * dd));
                gl[ch] -= go * dd;
                gs[ch] += go * ds;
            }
            let per_channel = |v: Vec<f64>| Some(Tensor::new(vec![c], v.into_iter().map(T::of).collect()).expect("shape"));
            vec![Some(Tensor::new(parents[0].shape().to_vec(), gz).expect("shape")), per_channel(gl), per_channel(gs)]
        }),
    )
    .map_err(Into::into)
}

/// `−Σ log₂ p` of a likelihood tensor, differentiable.
pub fn total_bits<T: Elem>(p: &Var<T>) -> Result<Var<T>> {
    Ok(p.ln()?.sum()?.scale(-std::f64::consts::LOG2_E)?)
}
