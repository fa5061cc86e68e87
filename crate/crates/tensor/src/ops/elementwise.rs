use crate::elem::Elem;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;
use crate::var::Var;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

fn same_shape<T: Elem>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Elementwise map with derivative `df(x, y)` evaluated at input `x` and output `y`.
fn unary<T: Elem>(
    op: &'static str,
    x: &Var<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Result<Var<T>> {
    let out = x.value().map(f);
    Var::from_op(
        op,
        out,
        vec![x.clone()],
        Box::new(move |g, p, y| {
            let x = p[0].value();
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .zip(y.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(g.shape().to_vec(), data).expect("shape"))]
        }),
    )
}

pub fn gelu_tanh_scalar<T: Elem>(x: T) -> T {
    let x = x.to_f64_lossless();
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    T::of(0.5 * x * (1.0 + u.tanh()))
}

fn gelu_tanh_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn softplus_scalar(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<T: Elem> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("add", self, other)?;
        let out = self.value().zip_map(other.value(), |a, b| a + b);
        Var::from_op(
            "add",
            out,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("sub", self, other)?;
        let out = self.value().zip_map(other.value(), |a, b| a - b);
        Var::from_op(
            "sub",
            out,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.map(|x| -x))]),
        )
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", self, other)?;
        let out = self.value().zip_map(other.value(), |a, b| a * b);
        Var::from_op(
            "mul",
            out,
            vec![self.clone(), other.clone()],
            Box::new(|g, p, _| {
                vec![
                    Some(g.zip_map(p[1].value(), |g, b| g * b)),
                    Some(g.zip_map(p[0].value(), |g, a| g * a)),
                ]
            }),
        )
    }

    pub fn scale(&self, c: f64) -> Result<Var<T>> {
        let c = T::of(c);
        unary("scale", self, move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<T>> {
        let c = T::of(c);
        unary("add_scalar", self, move |x| x + c, |_, _| T::one())
    }

    pub fn square(&self) -> Result<Var<T>> {
        unary("square", self, |x| x * x, |x, _| x + x)
    }

    pub fn exp(&self) -> Result<Var<T>> {
        unary("exp", self, |x| x.exp(), |_, y| y)
    }

    /// Natural logarithm.
    pub fn ln(&self) -> Result<Var<T>> {
        unary("ln", self, |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn softplus(&self) -> Result<Var<T>> {
        unary(
            "softplus",
            self,
            |x| T::of(softplus_scalar(x.to_f64_lossless())),
            |x, _| T::of(sigmoid(x.to_f64_lossless())),
        )
    }

    /// GELU with the tanh approximation,
    /// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu_tanh(&self) -> Result<Var<T>> {
        unary("gelu_tanh", self, gelu_tanh_scalar, |x, _| {
            T::of(gelu_tanh_grad(x.to_f64_lossless()))
        })
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu_erf(&self) -> Result<Var<T>> {
        unary(
            "gelu_erf",
            self,
            |x| {
                let x = x.to_f64_lossless();
                T::of(x * normal_cdf(x))
            },
            |x, _| {
                let x = x.to_f64_lossless();
                T::of(normal_cdf(x) + x * normal_pdf(x))
            },
        )
    }

    /// Clamp into `[lo, hi]`; zero gradient where clamped.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<T>> {
        let (lo, hi) = (T::of(lo), T::of(hi));
        unary(
            "clamp",
            self,
            move |x| x.max(lo).min(hi),
            move |x, _| if x < lo || x > hi { T::zero() } else { T::one() },
        )
    }

    pub fn sum(&self) -> Result<Var<T>> {
        let out = Tensor::scalar(self.value().sum());
        let shape = self.shape().to_vec();
        Var::from_op(
            "sum",
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(Tensor::full(shape.clone(), g.item()))]),
        )
    }

    pub fn mean(&self) -> Result<Var<T>> {
        let n = self.value().numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<T>> {
        let out = self.value().clone().reshape(shape)?;
        let in_shape = self.shape().to_vec();
        Var::from_op(
            "reshape",
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.clone().reshape(in_shape.clone()).expect("reshape"))]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_tanh_values() {
        assert_eq!(gelu_tanh_scalar(0.0f64), 0.0);
        assert!((gelu_tanh_scalar(3.0f64) - 2.99636).abs() < 1e-4);
        assert!(gelu_tanh_scalar(-10.0f64).abs() < 1e-6);
    }

    #[test]
    fn add_shape_mismatch_is_error() {
        let a = Var::constant(Tensor::<f32>::zeros([2]));
        let b = Var::constant(Tensor::<f32>::zeros([3]));
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn non_finite_output_is_error() {
        let a = Var::constant(Tensor::<f32>::zeros([2]));
        assert!(matches!(
            a.ln(),
            Err(crate::TensorError::NonFinite { op: "ln" })
        ));
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let x = Var::constant(Tensor::<f32>::from_f64([3], &[-100.0, 0.0, 100.0]).unwrap());
        let y = x.softplus().unwrap();
        let d = y.value().data();
        assert!(d[0] >= 0.0 && d[0] < 1e-30);
        assert!((d[1] - std::f32::consts::LN_2).abs() < 1e-6);
        assert_eq!(d[2], 100.0);
    }
}
