//! Named parameter collections and their binding onto a graph.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Ordered map from path-like names (`stage1.spatial.mamba.in_proj`) to tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::ConfigInvalid(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Set every tensor whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if name.starts_with(prefix) {
                t.data_mut().fill(T::zero());
                n += 1;
            }
        }
        n
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
            index: self.index.clone(),
        }
    }
}

/// Binds store entries onto a graph lazily, once each, as trainable leaves.
pub struct Binder<'a, T: Scalar> {
    pub graph: &'a Graph<T>,
    store: &'a ParamStore<T>,
    bound: RefCell<Vec<Option<Var>>>,
}

impl<'a, T: Scalar> Binder<'a, T> {
    pub fn new(graph: &'a Graph<T>, store: &'a ParamStore<T>) -> Self {
        Self {
            graph,
            store,
            bound: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        let i = self
            .store
            .position(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if let Some(v) = self.bound.borrow()[i] {
            return Ok(v);
        }
        let v = self.graph.param(self.store.tensor_at(i).clone());
        self.bound.borrow_mut()[i] = Some(v);
        Ok(v)
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn scope(&self, prefix: &str) -> Scope<'_, 'a, T> {
        Scope {
            binder: self,
            prefix: prefix.to_string(),
        }
    }

    /// Var bound for `name`, if the forward pass used it.
    pub fn bound_var(&self, name: &str) -> Option<Var> {
        self.store.position(name).and_then(|i| self.bound.borrow()[i])
    }

    /// Add this pass's gradients into `acc` (same layout as the store), scaled by `weight`.
    pub fn accumulate(&self, grads: &Gradients<T>, acc: &mut ParamStore<T>, weight: T) {
        for (i, slot) in self.bound.borrow().iter().enumerate() {
            let Some(v) = slot else { continue };
            let Some(gt) = grads.get(*v) else { continue };
            for (a, &g) in acc.tensor_at_mut(i).data_mut().iter_mut().zip(gt.data()) {
                *a += g * weight;
            }
        }
    }
}

/// Name prefix view onto a [`Binder`].
pub struct Scope<'b, 'a, T: Scalar> {
    binder: &'b Binder<'a, T>,
    prefix: String,
}

impl<'b, 'a, T: Scalar> Scope<'b, 'a, T> {
    pub fn graph(&self) -> &'a Graph<T> {
        self.binder.graph
    }

    pub fn p(&self, name: &str) -> Result<Var> {
        self.binder.get(&self.name(name))
    }

    pub fn has(&self, name: &str) -> bool {
        self.binder.store.contains(&self.name(name))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.binder.store.get(&self.name(name))
    }

    pub fn sub(&self, name: &str) -> Scope<'b, 'a, T> {
        Scope {
            binder: self.binder,
            prefix: self.name(name),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }
}
