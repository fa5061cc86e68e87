use ngsc_tensor::{Elem, Scope, Var};

use crate::error::Result;
use crate::layers::{Builder, Linear};

/// Token-wise two-layer MLP. With `tanh_gelu` off it uses the exact
/// erf-based GELU instead (ablation baseline).
#[derive(Clone, Debug)]
pub struct TagMlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub tanh_gelu: bool,
}

impl TagMlp {
    pub fn new(b: &mut Builder, dim: usize, expansion: usize, tanh_gelu: bool) -> Result<Self> {
        let hidden = dim * expansion.max(1);
        Ok(Self {
            fc1: Linear::new(&mut b.sub("fc1"), dim, hidden, true)?,
            fc2: Linear::new(&mut b.sub("fc2"), hidden, dim, true)?,
            tanh_gelu,
        })
    }

    pub fn forward<T: Elem>(&self, s: &Scope<T>, x: &Var<T>) -> Result<Var<T>> {
        let h = self.fc1.forward(s, x)?;
        let h = if self.tanh_gelu { h.gelu_tanh()? } else { h.gelu_erf()? };
        self.fc2.forward(s, &h)
    }
}
