//! Named learnable parameter storage.
//!
//! All model parameters live in a single [`ParamStore`], keyed by a
//! hierarchical dotted name. The store owns the authoritative values;
//! forward passes read immutable snapshots of them through the graph and
//! the optimizer writes updates back by id.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type ParamId = usize;

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new parameter tensor under a unique name.
    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(self.tensors.iter())
            .enumerate()
            .map(|(id, (n, t))| (id, n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replace the value of an existing parameter; shapes must match.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        if self.tensors[id].shape() != tensor.shape() {
            return Err(Error::internal(format!(
                "parameter {} shape {:?} cannot be replaced by {:?}",
                self.names[id],
                self.tensors[id].shape(),
                tensor.shape()
            )));
        }
        self.tensors[id] = tensor;
        Ok(())
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeros(store: &ParamStore) -> Self {
        Gradients {
            grads: vec![None; store.len()],
        }
    }

    pub(crate) fn from_raw(grads: Vec<Option<Tensor>>) -> Self {
        Gradients { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Accumulate `scale * other` into self (used for gradient accumulation).
    pub fn accumulate(&mut self, other: &Gradients, scale: f32) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (slot, g) in self.grads.iter_mut().zip(other.grads.iter()) {
            if let Some(g) = g {
                match slot {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += scale * b;
                        }
                    }
                    None => {
                        let mut scaled = g.clone();
                        for v in scaled.data_mut() {
                            *v *= scale;
                        }
                        *slot = Some(scaled);
                    }
                }
            }
        }
    }

    /// Overwrite one parameter's gradient.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) {
        if self.grads.len() <= id {
            self.grads.resize(id + 1, None);
        }
        self.grads[id] = Some(tensor);
    }

    pub fn is_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}
