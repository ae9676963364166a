//! Named parameter storage and its bridge onto a tape.

use std::collections::BTreeMap;

use crate::error::{AdError, Result};
use crate::tape::{Gradients, Tape, VarId};
use crate::tensor::Tensor;

/// Collection of named trainable tensors. Names are unique and iteration is
/// in sorted name order, which keeps every downstream consumer deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a fresh parameter. The name must be unused; the shape is fixed
    /// for the lifetime of the store.
    pub fn insert(&mut self, name: &str, mut tensor: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(AdError::Usage(format!("duplicate parameter name: {name}")));
        }
        tensor.set_requires_grad(true);
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| AdError::Usage(format!("unknown parameter: {name}")))
    }

    /// Overwrite values of an existing parameter; the shape must match.
    pub fn set_values(&mut self, name: &str, values: Tensor) -> Result<()> {
        let current = self
            .params
            .get_mut(name)
            .ok_or_else(|| AdError::Usage(format!("unknown parameter: {name}")))?;
        if current.shape() != values.shape() {
            return Err(AdError::Dimension {
                op: "ParameterStore::set_values",
                detail: format!(
                    "{name}: stored {:?} vs new {:?}",
                    current.shape(),
                    values.shape()
                ),
            });
        }
        let keep_flag = current.requires_grad();
        *current = values;
        current.set_requires_grad(keep_flag);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Put every parameter on the tape as a gradient-tracking leaf.
    pub fn register(&self, tape: &mut Tape) -> TapeParams {
        let mut ids = BTreeMap::new();
        for (name, tensor) in &self.params {
            ids.insert(name.clone(), tape.leaf(tensor.clone()));
        }
        TapeParams { ids }
    }
}

/// Map from parameter name to its leaf on one particular tape.
pub struct TapeParams {
    ids: BTreeMap<String, VarId>,
}

impl TapeParams {
    pub fn id(&self, name: &str) -> Result<VarId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| AdError::Usage(format!("parameter not registered on tape: {name}")))
    }

    /// Collect gradients for every registered parameter; parameters the loss
    /// never touched come back as zeros.
    pub fn collect(&self, grads: &Gradients, store: &ParameterStore) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, &id) in &self.ids {
            let shape = store.get(name).map(|t| t.shape().to_vec()).unwrap_or_default();
            out.insert(name.clone(), grads.get_or_zeros(id, &shape));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(store.insert("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn shape_immutable_after_creation() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(store.set_values("w", Tensor::zeros(&[3])).is_err());
        assert!(store.set_values("w", Tensor::from_vec(vec![1.0, 2.0]).unwrap()).is_ok());
    }

    #[test]
    fn untouched_param_collects_zero() {
        let mut store = ParameterStore::new();
        store.insert("used", Tensor::from_vec(vec![2.0]).unwrap()).unwrap();
        store.insert("unused", Tensor::from_vec(vec![7.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let reg = store.register(&mut tape);
        let x = reg.id("used").unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        let by_name = reg.collect(&grads, &store);
        assert_eq!(by_name["used"].data(), &[4.0]);
        assert_eq!(by_name["unused"].data(), &[0.0]);
    }
}
