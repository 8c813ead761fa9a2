use std::collections::BTreeMap;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Real, Result};

/// A learnable (or frozen) tensor living outside any single tape.
#[derive(Clone, Debug)]
pub struct DiffTensor<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    /// Same shape as `values` when present.
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
    /// Node on the tape this tensor was last bound to.
    pub node_id: Option<Var>,
}

impl<T: Real> DiffTensor<T> {
    pub fn new(value: Tensor<T>, requires_grad: bool) -> Self {
        Self {
            shape: value.shape().to_vec(),
            values: value.into_data(),
            grad: None,
            requires_grad,
            node_id: None,
        }
    }

    pub fn tensor(&self) -> Tensor<T> {
        Tensor::new(self.shape.clone(), self.values.clone()).expect("consistent parameter shape")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Named parameter collection, iterated in name order so that serialization
/// and optimizer updates are deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, DiffTensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.entries.insert(name.into(), DiffTensor::new(value, true));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&DiffTensor<T>> {
        self.entries.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut DiffTensor<T>> {
        self.entries.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<DiffTensor<T>> {
        self.entries.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DiffTensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut DiffTensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records the parameter on `tape` and remembers the node.
    pub fn bind(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        let p = self.get_mut(name)?;
        let v = tape.leaf(p.tensor(), p.requires_grad)?;
        p.node_id = Some(v);
        Ok(v)
    }

    /// Adds the tape gradients of every bound parameter into `grad` and
    /// clears the bindings.
    pub fn pull_grads(&mut self, tape: &Tape<T>) {
        for p in self.entries.values_mut() {
            let Some(v) = p.node_id.take() else { continue };
            let Some(g) = tape.grad(v) else { continue };
            match &mut p.grad {
                Some(acc) => {
                    for (a, &b) in acc.iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => p.grad = Some(g.data().to_vec()),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = None;
            p.node_id = None;
        }
    }

    /// Takes over every parameter of `other`, replacing same-named entries.
    pub fn absorb(&mut self, other: ParamStore<T>) {
        self.entries.extend(other.entries);
    }
}
