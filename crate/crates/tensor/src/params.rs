use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Named collection of learnable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Gradient map keyed by parameter name.
pub type Gradients = ParameterStore;

impl Gradients {
    /// A zero gradient for every parameter in `params`.
    pub fn zeros_like(params: &ParameterStore) -> Self {
        let mut out = ParameterStore::new();
        for (name, t) in params.iter() {
            out.insert(name, Tensor::zeros(t.shape()));
        }
        out
    }

    /// `self += other`, entry by entry. Names missing from `self` are added.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (name, g) in other.iter() {
            match self.tensors.get_mut(name) {
                Some(dst) => {
                    if dst.shape() != g.shape() {
                        return Err(TensorError::Dimension {
                            op: "accumulate",
                            left: dst.shape().to_vec(),
                            right: g.shape().to_vec(),
                        });
                    }
                    for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                None => {
                    self.tensors.insert(name.to_string(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale_all(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }
}
