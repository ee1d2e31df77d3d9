use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stable handle into a [`ParamStore`]. Removing a parameter never
/// invalidates the ids of the others.
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
    pub tensor: Tensor<T>,
    pub trainable: bool,
    /// Additive accumulator; `None` until the first backward that reaches it.
    pub grad: Option<Tensor<T>>,
}

/// Named parameter collection. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    slots: Vec<Option<Parameter<T>>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { slots: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.slots.len());
        self.index.insert(name.clone(), id);
        self.slots.push(Some(Parameter { name, tensor, trainable, grad: None }));
        Ok(id)
    }

    pub fn remove(&mut self, id: ParamId) -> Option<Parameter<T>> {
        let p = self.slots.get_mut(id.0)?.take()?;
        self.index.remove(&p.name);
        Some(p)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        self.slots[id.0].as_ref().expect("parameter was removed")
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        self.slots[id.0].as_mut().expect("parameter was removed")
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.get(id).tensor
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index.get(name).copied().ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Live parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.slots.iter().enumerate().filter_map(|(i, p)| p.as_ref().map(|p| (ParamId(i), p)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<T>)> {
        self.slots.iter_mut().enumerate().filter_map(|(i, p)| p.as_mut().map(|p| (ParamId(i), p)))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.iter().map(|(_, p)| p.name.clone()).collect()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.tensor.len()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.iter().map(|(_, p)| p.tensor.len()).sum()
    }

    /// Marks exactly the parameters accepted by `pred` as trainable.
    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        for (_, p) in self.iter_mut() {
            p.trainable = pred(&p.name);
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.iter_mut() {
            p.grad = None;
        }
    }

    /// Adds `grads` into the per-parameter accumulators.
    pub fn accumulate(&mut self, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        for (id, g) in grads {
            let p = self.get_mut(*id);
            match &mut p.grad {
                Some(acc) => acc.add_assign(g)?,
                None => {
                    p.tensor.expect_same_shape("accumulate", g)?;
                    p.grad = Some(g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            slots: self
                .slots
                .iter()
                .map(|s| {
                    s.as_ref().map(|p| Parameter {
                        name: p.name.clone(),
                        tensor: p.tensor.cast(),
                        trainable: p.trainable,
                        grad: p.grad.as_ref().map(Tensor::cast),
                    })
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}
