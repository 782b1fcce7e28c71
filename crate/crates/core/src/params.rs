//! Named learnable tensors and non-learnable buffers.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Container, DType, Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: Vec<(String, Arc<Tensor>)>,
    buffers: Vec<(String, Tensor)>,
    index: HashMap<String, Slot>,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Param(usize),
    Buffer(usize),
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn claim(&mut self, name: &str, slot: Slot) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate tensor name {name}")));
        }
        self.index.insert(name.to_string(), slot);
        Ok(())
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        self.claim(&name, Slot::Param(self.params.len()))?;
        self.params.push((name, Arc::new(value)));
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> Result<BufferId> {
        let name = name.into();
        self.claim(&name, Slot::Buffer(self.buffers.len()))?;
        self.buffers.push((name, value));
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].1
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].1)
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.params[id.0].0
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].1
    }

    pub fn set_buffer(&mut self, id: BufferId, value: Tensor) -> Result<()> {
        let slot = &mut self.buffers[id.0];
        if slot.1.shape() != value.shape() {
            return Err(Error::shape(format!(
                "buffer {}: {:?} vs {:?}",
                slot.0,
                slot.1.shape(),
                value.shape()
            )));
        }
        slot.1 = value;
        Ok(())
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        match self.index.get(name) {
            Some(Slot::Param(i)) => Some(ParamId(*i)),
            _ => None,
        }
    }

    pub fn find_buffer(&self, name: &str) -> Option<BufferId> {
        match self.index.get(name) {
            Some(Slot::Buffer(i)) => Some(BufferId(*i)),
            _ => None,
        }
    }

    /// Places every parameter on `tape` as a leaf, indexed by `ParamId`.
    /// Values are shared, not copied.
    pub fn register<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|(_, t)| tape.leaf_shared(Arc::clone(t), trainable))
            .collect()
    }

    /// Gradients of registered parameters, zero where the loss does not
    /// depend on a parameter.
    pub fn collect_grads(&self, grads: &Gradients, vars: &[Var<'_>]) -> Vec<Tensor> {
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }

    pub fn to_container(&self, metadata: impl Into<String>, dtype: DType) -> Container {
        let mut c = Container::new(metadata);
        for (name, t) in &self.params {
            c.push(name.clone(), t.as_ref().clone(), dtype);
        }
        for (name, t) in &self.buffers {
            c.push(name.clone(), t.clone(), dtype);
        }
        c
    }

    /// Overwrites every tensor from `c` by name. Missing, extra, or
    /// mis-shaped entries are errors.
    pub fn load_container(&mut self, c: &Container) -> Result<()> {
        if c.entries.len() != self.params.len() + self.buffers.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                c.entries.len(),
                self.params.len() + self.buffers.len()
            )));
        }
        for e in &c.entries {
            let slot = *self
                .index
                .get(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {}", e.name)))?;
            let target = match slot {
                Slot::Param(i) => Arc::make_mut(&mut self.params[i].1),
                Slot::Buffer(i) => &mut self.buffers[i].1,
            };
            if target.shape() != e.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: checkpoint shape {:?}, model shape {:?}",
                    e.name,
                    e.tensor.shape(),
                    target.shape()
                )));
            }
            *target = e.tensor.clone();
        }
        Ok(())
    }
}
