use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamRegistry {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        Ok(())
    }

    /// Weight matrix drawn from `U(-1/√fan_in, 1/√fan_in)`, `fan_in = rows`.
    pub fn insert_uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<()> {
        let bound = 1.0 / (rows.max(1) as f64).sqrt();
        let t = Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound));
        self.insert(name, t)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.values[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.values[i]),
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub(crate) fn value_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub fn value_at(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.names[i]
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.values.iter().map(|v| tape.leaf(v.clone())).collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }
}

/// Tape handles for a registry, aligned with its order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Gradients after `backward`; parameters the loss never reached get zeros.
    pub fn gradients(&self, tape: &Tape) -> Gradients {
        let grads = self
            .vars
            .iter()
            .map(|&v| match tape.grad(v) {
                Some(g) => g.clone(),
                None => {
                    let [r, c] = tape.value(v).shape();
                    Tensor::zeros(r, c)
                }
            })
            .collect();
        Gradients { grads }
    }
}

/// Per-parameter gradients aligned with a [`ParamRegistry`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(registry: &ParamRegistry) -> Self {
        Self {
            grads: registry
                .values
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.grads[i]
    }

    pub fn by_name<'a>(&'a self, registry: &ParamRegistry, name: &str) -> Result<&'a Tensor> {
        let i = registry
            .position(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        Ok(&self.grads[i])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::all_finite)
    }
}
