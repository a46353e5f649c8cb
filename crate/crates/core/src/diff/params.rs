use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A trainable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    name: String,
    value: Tensor,
    #[serde(skip)]
    grad: Option<Tensor>,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor {
        self.grad.as_ref().expect("gradient accumulator allocated")
    }

    /// Split borrow used by optimizers.
    pub fn value_and_grad_mut(&mut self) -> (&mut Tensor, &Tensor) {
        (
            &mut self.value,
            self.grad.as_ref().expect("gradient accumulator allocated"),
        )
    }

    fn ensure_grad(&mut self) {
        let fresh = match &self.grad {
            Some(g) => g.shape() != self.value.shape(),
            None => true,
        };
        if fresh {
            self.grad = Some(Tensor::zeros(self.value.shape()));
        }
    }
}

/// Ordered collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Parameter>", into = "Vec<Parameter>")]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl From<Vec<Parameter>> for ParamStore {
    fn from(mut params: Vec<Parameter>) -> Self {
        params.iter_mut().for_each(Parameter::ensure_grad);
        ParamStore { params }
    }
}

impl From<ParamStore> for Vec<Parameter> {
    fn from(store: ParamStore) -> Self {
        store.params
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let mut p = Parameter {
            name,
            value,
            grad: None,
        };
        p.ensure_grad();
        self.params.push(p);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.ensure_grad();
            if let Some(g) = p.grad.as_mut() {
                g.data_mut().fill(0.0);
            }
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        let p = &mut self.params[id.0];
        p.ensure_grad();
        let acc = p.grad.as_mut().expect("allocated above");
        for (a, g) in acc.data_mut().iter_mut().zip(grad) {
            *a += g;
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
