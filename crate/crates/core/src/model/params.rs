use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.position(name).is_some() {
            return Err(Error::invalid(
                "ParamStore::insert",
                format!("duplicate parameter {name}"),
            ));
        }
        self.names.push(name.to_string());
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(ParamId(self.tensors.len() - 1))
    }

    /// Zero-mean Gaussian tensor with the given standard deviation.
    pub fn insert_normal(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::invalid("ParamStore::insert_normal", format!("{e}")))?;
        let t = Tensor::from_fn(shape, |_| normal.sample(rng));
        self.insert(name, t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self.position(name).ok_or_else(|| {
            Error::invalid("ParamStore::assign", format!("unknown parameter {name}"))
        })?;
        if self.tensors[i].shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::assign",
                "shape",
                format!(
                    "{name}: expected {:?}, got {:?}",
                    self.tensors[i].shape(),
                    value.shape()
                ),
            ));
        }
        self.tensors[i] = value.with_requires_grad(true);
        Ok(())
    }

    /// Records every parameter as a gradient-tracked leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.zero_grad();
                g.param(t)
            })
            .collect::<Result<_>>()?;
        Ok(Bound(vars))
    }

    /// Collects per-parameter gradients after `g.backward`; parameters the
    /// loss does not reach get zeros.
    pub fn take_grads(&self, g: &mut Graph, bound: &Bound) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .zip(&bound.0)
            .map(|(t, &v)| g.take_grad(v).unwrap_or_else(|| alloc::vec![0.0; t.numel()]))
            .collect()
    }
}

/// Parameters of a [`ParamStore`] recorded on one graph.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}
