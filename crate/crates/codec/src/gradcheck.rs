//! Finite-difference gradient checks over codec-level objectives.

use std::cell::RefCell;

use ngsc_tensor::{GradCheckConfig, GradCheckReport, ParamStore, Scope, TensorError, Var};

use crate::error::{CodecError, Result};

/// [`ngsc_tensor::grad_check`] for objectives that fail with [`CodecError`].
pub fn grad_check<F>(store: &mut ParamStore<f64>, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&Scope<f64>) -> Result<Var<f64>>,
{
    let failure: RefCell<Option<CodecError>> = RefCell::new(None);
    let wrapped = |s: &Scope<f64>| {
        f(s).map_err(|e| {
            let msg = e.to_string();
            failure.borrow_mut().get_or_insert(e);
            TensorError::Invalid { op: "objective", detail: msg }
        })
    };
    let out = ngsc_tensor::grad_check(store, wrapped, cfg);
    match (out, failure.into_inner()) {
        (Err(_), Some(e)) => Err(e),
        (out, _) => Ok(out?),
    }
}
