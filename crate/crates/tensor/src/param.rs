use std::collections::HashMap;

use crate::elem::Elem;
use crate::error::{shape_err, Result, TensorError};
use crate::tensor::Tensor;
use crate::var::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named parameters of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Elem> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad: None });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count over all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if g.shape() != p.value.shape() {
            return Err(shape_err(
                "backward",
                format!("grad {:?} for parameter {} of shape {:?}", g.shape(), p.name, p.value.shape()),
            ));
        }
        match &mut p.grad {
            Some(acc) => acc.add_assign(g),
            None => p.grad = Some(g.clone()),
        }
        Ok(())
    }

    /// Copies values from `other` by name. Shapes must agree.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for p in &mut self.params {
            let id = other.id(&p.name)?;
            let src = &other.params[id.0].value;
            if src.shape() != p.value.shape() {
                return Err(shape_err(
                    "load",
                    format!("{}: {:?} vs {:?}", p.name, src.shape(), p.value.shape()),
                ));
            }
            p.value = src.clone();
        }
        if other.len() != self.len() {
            return Err(TensorError::Checkpoint(format!(
                "parameter count mismatch: {} in source, {} in model",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn cast<U: Elem>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), value: p.value.cast(), grad: None })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Global L2 norm of all present gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|x| {
                let x = x.to_f64_lossless();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Binds a parameter store for one forward pass. With `track == false`
/// parameters enter the graph as constants and nothing is recorded.
pub struct Scope<'a, T> {
    store: &'a ParamStore<T>,
    track: bool,
}

impl<'a, T: Elem> Scope<'a, T> {
    pub fn tracked(store: &'a ParamStore<T>) -> Self {
        Self { store, track: true }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Self { store, track: false }
    }

    pub fn param(&self, id: ParamId) -> Var<T> {
        let value = self.store.get(id).value.clone();
        if self.track {
            Var::parameter(value, id)
        } else {
            Var::constant(value)
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn is_tracked(&self) -> bool {
        self.track
    }
}
