//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::param::{ParamStore, Scope};
use crate::var::{backward, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates probed per parameter; smaller parameters are probed fully.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-4, coords_per_param: 6, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub coords_checked: usize,
}

/// Compares backward-pass gradients of the scalar objective `f` with
/// central differences `(f(p + eps) − f(p − eps)) / (2·eps)` on a random
/// subset of coordinates of every parameter. The relative error of each
/// coordinate uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(store: &mut ParamStore<f64>, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&Scope<f64>) -> Result<Var<f64>>,
{
    store.zero_grad();
    let loss = f(&Scope::tracked(store))?;
    let base = loss.value().item();
    backward(&loss, store)?;
    drop(loss);
    let again = f(&Scope::frozen(store))?.value().item();
    if again.to_bits() != base.to_bits() {
        return Err(TensorError::Unreliable(base, again));
    }

    let eval = |store: &ParamStore<f64>| -> Result<f64> { Ok(f(&Scope::frozen(store))?.value().item()) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport { max_relative_error: 0.0, worst_param: String::new(), coords_checked: 0 };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let numel = store.get(id).value.numel();
        let coords: Vec<usize> = if numel <= cfg.coords_per_param {
            (0..numel).collect()
        } else {
            sample(&mut rng, numel, cfg.coords_per_param).into_vec()
        };
        for c in coords {
            let analytic = store.get(id).grad.as_ref().map_or(0.0, |g| g.data()[c]);
            let orig = store.get(id).value.data()[c];
            store.get_mut(id).value.data_mut()[c] = orig + cfg.eps;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[c] = orig - cfg.eps;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[c] = orig;
            let numeric = (plus? - minus?) / (2.0 * cfg.eps);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_param = format!("{}[{c}] analytic {analytic:e} numeric {numeric:e}", store.get(id).name);
            }
        }
    }
    store.zero_grad();
    Ok(report)
}
