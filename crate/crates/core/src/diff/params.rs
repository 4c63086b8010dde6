use indexmap::IndexMap;

use super::scalar::Scalar;
use super::tensor::Tensor;
use super::DiffError;

/// Index of a parameter inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub(crate) struct ParamSlot<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Tensor<T>,
    pub(crate) m: Tensor<T>,
    pub(crate) v: Tensor<T>,
}

/// Named trainable tensors with gradient accumulators and Adam moments.
///
/// Iteration follows insertion order, which is also the checkpoint order.
#[derive(Clone, Debug)]
pub struct ParameterStore<T> {
    slots: IndexMap<String, ParamSlot<T>>,
    pub(crate) step: u64,
}

impl<T: Scalar> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            slots: IndexMap::new(),
            step: 0,
        }
    }

    /// Registers a parameter. Re-registering a name is an error.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, DiffError> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(DiffError::DuplicateParam(name));
        }
        let zeros = Tensor::zeros(value.shape());
        let (idx, _) = self.slots.insert_full(
            name,
            ParamSlot {
                value,
                grad: zeros.clone(),
                m: zeros.clone(),
                v: zeros,
            },
        );
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.slots.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.slots.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid param id")
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.slots[id.0].value
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.slots[id.0].grad
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.slots[id.0].grad
    }

    pub(crate) fn slots_mut(&mut self) -> impl Iterator<Item = &mut ParamSlot<T>> {
        self.slots.values_mut()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for s in self.slots.values_mut() {
            s.grad.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Sum of squares of every parameter.
    pub fn squared_norm(&self) -> T {
        self.slots.values().map(|s| s.value.sum_squares()).sum()
    }

    /// Overwrites values from another store with identical names and shapes.
    pub fn load_values<'a>(
        &mut self,
        entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
    ) -> Result<(), DiffError> {
        let mut seen = vec![false; self.slots.len()];
        for (name, t) in entries {
            let (idx, _, slot) = self
                .slots
                .get_full_mut(name)
                .ok_or_else(|| DiffError::UnknownParam(name.to_string()))?;
            if slot.value.shape() != t.shape() {
                return Err(DiffError::ParamShape {
                    name: name.to_string(),
                    expected: slot.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            slot.value = t.clone();
            seen[idx] = true;
        }
        if let Some(idx) = seen.iter().position(|s| !s) {
            let (name, _) = self.slots.get_index(idx).expect("index in range");
            return Err(DiffError::MissingParam(name.clone()));
        }
        Ok(())
    }

    /// Same names and values in a different precision; optimizer state is reset.
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for (name, s) in &self.slots {
            out.insert(name.clone(), s.value.cast()).expect("unique names");
        }
        out
    }
}
