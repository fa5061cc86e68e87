use crate::elem::Elem;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;
use crate::var::Var;

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Elem> Var<T> {
    /// Normalizes each vector along the last axis to zero mean and unit
    /// (population) variance, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let d = *self.shape().last().unwrap_or(&0);
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(shape_err(
                "layer_norm",
                format!("input {:?} with gain {:?} bias {:?}", self.shape(), gain.shape(), bias.shape()),
            ));
        }
        let eps = T::of(LAYER_NORM_EPS);
        let inv_d = T::of(1.0 / d as f64);
        let x = self.value().data();
        let rows = x.len() / d;
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let s = T::one() / (var + eps).sqrt();
            rstd[r] = s;
            for (h, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *h = (v - mean) * s;
            }
        }
        let (g, b) = (gain.value().data(), bias.value().data());
        let out: Vec<T> = xhat
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((&h, &g), &b)| h * g + b))
            .collect();
        Var::from_op(
            "layer_norm",
            Tensor::new(self.shape().to_vec(), out)?,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |gy, p, _| {
                let g = p[1].value().data();
                let gyd = gy.data();
                let mut gx = vec![T::zero(); gyd.len()];
                let mut gg = vec![T::zero(); d];
                let mut gb = vec![T::zero(); d];
                for r in 0..rows {
                    let gyr = &gyd[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for i in 0..d {
                        let dh = gyr[i] * g[i];
                        mean_dh = mean_dh + dh;
                        mean_dh_h = mean_dh_h + dh * hr[i];
                        gg[i] = gg[i] + gyr[i] * hr[i];
                        gb[i] = gb[i] + gyr[i];
                    }
                    mean_dh = mean_dh * inv_d;
                    mean_dh_h = mean_dh_h * inv_d;
                    for i in 0..d {
                        gx[r * d + i] = rstd[r] * (gyr[i] * g[i] - mean_dh - hr[i] * mean_dh_h);
                    }
                }
                vec![
                    Some(Tensor::new(gy.shape().to_vec(), gx).expect("shape")),
                    Some(Tensor::new(vec![d], gg).expect("shape")),
                    Some(Tensor::new(vec![d], gb).expect("shape")),
                ]
            }),
        )
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(invalid("softmax", format!("axis {axis} for rank {}", shape.len())));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = self.value().data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| x[at(j)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for j in 0..n {
                    let e = (x[at(j)] - max).exp();
                    y[at(j)] = e;
                    sum = sum + e;
                }
                for j in 0..n {
                    y[at(j)] = y[at(j)] / sum;
                }
            }
        }
        Var::from_op(
            "softmax",
            Tensor::new(shape.clone(), y)?,
            vec![self.clone()],
            Box::new(move |gy, _, out| {
                let (g, y) = (gy.data(), out.data());
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot: T = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(shape.clone(), gx).expect("shape"))]
            }),
        )
    }
}
