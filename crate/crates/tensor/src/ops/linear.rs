use crate::elem::{strides, Elem};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;
use crate::var::Var;

impl<T: Elem> Var<T> {
    /// Affine map over the last axis: `x·W + b` with `W` of shape `(in, out)`.
    pub fn linear(&self, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
        let xs = self.shape();
        let ws = weight.shape();
        let fan_in = *xs.last().unwrap_or(&0);
        if ws.len() != 2 || ws[0] != fan_in {
            return Err(shape_err("linear", format!("input {xs:?} with weight {ws:?}")));
        }
        let fan_out = ws[1];
        if let Some(b) = bias {
            if b.shape() != [fan_out] {
                return Err(shape_err("linear", format!("bias {:?} for {fan_out} outputs", b.shape())));
            }
        }
        let rows = self.value().numel() / fan_in;
        let mut out = vec![T::zero(); rows * fan_out];
        if let Some(b) = bias {
            for row in out.chunks_exact_mut(fan_out) {
                row.copy_from_slice(b.value().data());
            }
        }
        T::gemm(
            rows,
            fan_in,
            fan_out,
            self.value().data(),
            strides(fan_in, false),
            weight.value().data(),
            strides(fan_out, false),
            if bias.is_some() { T::one() } else { T::zero() },
            &mut out,
        );
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().expect("rank >= 1") = fan_out;
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Var::from_op(
            "linear",
            Tensor::new(out_shape, out)?,
            parents,
            Box::new(move |g, p, _| {
                let (x, w) = (p[0].value(), p[1].value());
                let gx = p[0].requires_grad().then(|| {
                    let mut gx = vec![T::zero(); rows * fan_in];
                    T::gemm(
                        rows,
                        fan_out,
                        fan_in,
                        g.data(),
                        strides(fan_out, false),
                        w.data(),
                        strides(fan_out, true),
                        T::zero(),
                        &mut gx,
                    );
                    Tensor::new(x.shape().to_vec(), gx).expect("shape")
                });
                let gw = p[1].requires_grad().then(|| {
                    let mut gw = vec![T::zero(); fan_in * fan_out];
                    T::gemm(
                        fan_in,
                        rows,
                        fan_out,
                        x.data(),
                        strides(fan_in, true),
                        g.data(),
                        strides(fan_out, false),
                        T::zero(),
                        &mut gw,
                    );
                    Tensor::new(vec![fan_in, fan_out], gw).expect("shape")
                });
                let mut grads = vec![gx, gw];
                if p.len() == 3 {
                    let mut gb = vec![T::zero(); fan_out];
                    for row in g.data().chunks_exact(fan_out) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    grads.push(Some(Tensor::new(vec![fan_out], gb).expect("shape")));
                }
                grads
            }),
        )
    }
}
