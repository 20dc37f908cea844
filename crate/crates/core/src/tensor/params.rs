use indexmap::IndexMap;

use super::{Scalar, Tensor};
use crate::error::{CheckpointError, Error, Result};

/// One named tensor plus its Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<F> {
    pub tensor: Tensor<F>,
    /// Buffers such as batch-norm running statistics are persisted but
    /// never touched by the optimizer.
    pub trainable: bool,
    pub(crate) m: Vec<F>,
    pub(crate) v: Vec<F>,
}

impl<F: Scalar> ParamEntry<F> {
    pub fn first_moment(&self) -> &[F] {
        &self.m
    }

    pub fn second_moment(&self) -> &[F] {
        &self.v
    }
}

/// Named model tensors in insertion order, with optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<F = f32> {
    entries: IndexMap<String, ParamEntry<F>>,
    pub(crate) step: u64,
}

/// Gradients keyed by parameter name.
pub type ParamGrads<F> = IndexMap<String, Vec<F>>;

impl<F: Scalar> Default for ModelParameters<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ModelParameters<F> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>, trainable: bool) {
        let n = tensor.len();
        let tensor = tensor.with_requires_grad(trainable);
        self.entries.insert(
            name.into(),
            ParamEntry {
                tensor,
                trainable,
                m: vec![F::zero(); n],
                v: vec![F::zero(); n],
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    /// Panicking lookup for names fixed by a model's architecture.
    pub fn tensor(&self, name: &str) -> &Tensor<F> {
        self.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry<F>> {
        self.entries.get(name)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &ParamEntry<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<F>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.values().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    /// Copy gradients stored on the tensors into a [`ParamGrads`] map.
    pub fn collect_grads(&self) -> ParamGrads<F> {
        self.entries
            .iter()
            .filter_map(|(k, e)| e.tensor.grad().map(|g| (k.clone(), g.to_vec())))
            .collect()
    }

    /// Overwrite every tensor with the same-named tensor of `other`.
    ///
    /// Both sides must list exactly the same names with the same shapes.
    /// Optimizer state is reset.
    pub fn restore_from(&mut self, other: &ModelParameters<F>) -> Result<()> {
        if let Some(unknown) = other.names().find(|n| !self.entries.contains_key(*n)) {
            return Err(CheckpointError::Schema(format!("unknown parameter `{unknown}`")).into());
        }
        for (name, entry) in self.entries.iter_mut() {
            let src = other
                .get(name)
                .ok_or_else(|| CheckpointError::Schema(format!("missing parameter `{name}`")))?;
            if src.shape() != entry.tensor.shape() {
                return Err(Error::Checkpoint(CheckpointError::Schema(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    entry.tensor.shape()
                ))));
            }
            entry.tensor.data_mut().copy_from_slice(src.data());
            entry.m.fill(F::zero());
            entry.v.fill(F::zero());
        }
        self.step = 0;
        Ok(())
    }

    /// Convert every tensor to another scalar type (moments reset).
    pub fn cast<G: Scalar>(&self) -> ModelParameters<G> {
        let mut out = ModelParameters::new();
        for (name, e) in &self.entries {
            out.insert(name.clone(), e.tensor.cast(), e.trainable);
        }
        out
    }
}
