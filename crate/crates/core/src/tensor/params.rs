use super::{Gradients, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Named, ordered collection of learnable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its slot index. The tensor is marked
    /// as requiring gradients.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor as a leaf of `g`, in slot order.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.tensors.iter().map(|t| g.leaf(t)).collect()
    }

    /// Like [`bind`](Self::bind) but without gradient tracking.
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<NodeId> {
        self.tensors
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.set_requires_grad(false);
                g.leaf(&t)
            })
            .collect()
    }

    /// Adds the gradients of the bound leaves into each tensor's `grad`.
    /// Leaves the root does not depend on contribute zeros.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &[NodeId]) -> Result<()> {
        if bound.len() != self.tensors.len() {
            return Err(Error::usage(format!(
                "accumulate: {} bound nodes for {} parameters",
                bound.len(),
                self.tensors.len()
            )));
        }
        for (t, id) in self.tensors.iter_mut().zip(bound) {
            match grads.get(*id) {
                Some(g) => t.accumulate_grad(g),
                None => {
                    let zeros = vec![0.0; t.len()];
                    t.accumulate_grad(&zeros);
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Sum of squared gradient entries (missing grads count as zero).
    pub fn grad_sq_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn scale_grads(&mut self, c: f64) {
        for t in &mut self.tensors {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|v| *v *= c);
            }
        }
    }

    /// Replaces tensor data from `other`, which must have identical names
    /// and shapes.
    pub fn load_from(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in entries {
            let slot = self
                .get_mut(name)
                .ok_or_else(|| Error::Archive(format!("unknown parameter {name}")))?;
            if slot.shape() != t.shape() {
                return Err(Error::dim("load_params", slot.shape(), t.shape()));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        if entries.len() != self.len() {
            return Err(Error::Archive(format!(
                "archive has {} tensors, expected {}",
                entries.len(),
                self.len()
            )));
        }
        Ok(())
    }
}
