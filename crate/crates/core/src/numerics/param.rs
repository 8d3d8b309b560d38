use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which part of the model a parameter belongs to; freeze policies key off this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    SeqShort,
    ClsToken,
    Positional,
    /// Gain or shift of a layer norm inside an encoder block.
    BlockLayerNorm,
    /// Attention or feed-forward weight/bias inside an encoder block.
    BlockWeight,
    Head,
}

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub trainable: bool,
    pub role: ParamRole,
}

impl<T: Scalar> Parameter<T> {
    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    /// Adds `scale * g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &Tensor<T>, scale: T) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(Error::TensorShape {
                name: self.name.clone(),
                expected: self.value.shape().to_vec(),
                found: g.shape().to_vec(),
            });
        }
        match &mut self.grad {
            Some(acc) => acc.axpy(scale, g),
            None => self.grad = Some(g.map(|v| v * scale)),
        }
        Ok(())
    }
}

/// Flat, ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, role: ParamRole) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Parameter {
            name,
            value,
            grad: None,
            trainable: true,
            role,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a parameter drawn i.i.d. from N(0, std²).
    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        role: ParamRole,
        rng: &mut R,
    ) -> ParamId {
        let value = normal_tensor(shape, std, rng);
        self.add(name, value, role)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn count(&self, only_trainable: bool) -> usize {
        self.params
            .iter()
            .filter(|p| !only_trainable || p.trainable)
            .map(Parameter::numel)
            .sum()
    }
}

fn normal_tensor<T: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("std is finite and non-negative");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}
