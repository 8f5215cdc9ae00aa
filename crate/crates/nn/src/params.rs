use std::collections::HashMap;

use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State that is saved with the model but never receives gradients (batchnorm running stats).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Parameter<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub kind: ParamKind,
}

impl<T: Real> Parameter<T> {
    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }
}

/// Every tensor a model owns, in registration order.
///
/// Registration order is the checkpoint order and the optimizer order, so two stores built by
/// the same code are interchangeable.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    /// Registers a tensor. Panics on a duplicate name; names are fixed by model code.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "parameter {name} registered twice");
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad, kind });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Number of trainable scalars whose name starts with `prefix`.
    pub fn trainable_count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.is_trainable() && p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    /// Same parameters, converted element-wise to another precision. Gradients are reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.register(p.name.clone(), p.value.cast(), p.kind);
        }
        out
    }
}
