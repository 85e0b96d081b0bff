//! Named trainable parameters and their per-pass bindings onto a graph.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{read_u16, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter tensors. Order is insertion order and is the
/// order used by the optimizer and by checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a differentiable leaf on `graph`.
    pub fn bind(&self, graph: &mut Graph<F>) -> ParamVars {
        ParamVars {
            vars: self.tensors.iter().map(|t| graph.param(t.clone())).collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Checkpoint body: parameter count (u32), then per parameter the name
    /// length (u16), the UTF-8 name and one tensor record.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let count = u32::try_from(self.len()).map_err(|_| Error::Format("too many parameters".into()))?;
        w.write_all(&count.to_le_bytes())?;
        for (name, t) in self.iter() {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format("name too long".into()))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            t.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        let count = u32::from_le_bytes(b);
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u16(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let t = Tensor::read_from(r)?;
            store.add(name, t).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(store)
    }

    /// Overwrites values from `other`, matching by name. Every parameter of
    /// `self` must be present in `other` with the same shape, and vice versa.
    pub fn load_values(&mut self, other: &ParamStore<F>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters, model expects {}",
                other.len(),
                self.len()
            )));
        }
        let index: HashMap<&str, &Tensor<F>> = other.iter().collect();
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = index
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter `{name}`")))?;
            if src.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?} in checkpoint, model expects {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = (*src).clone();
        }
        Ok(())
    }
}

/// Graph variables of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    /// Wraps already-recorded leaves, one per parameter in store order.
    pub(crate) fn from_vars(vars: Vec<Var>) -> Self {
        ParamVars { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn opt(&self, id: Option<ParamId>) -> Option<Var> {
        id.map(|i| self.vars[i.0])
    }

    /// Pulls each parameter's gradient out of `grads`, in store order.
    pub fn collect<F: Real>(&self, grads: &mut Gradients<F>) -> Vec<Option<Tensor<F>>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}
