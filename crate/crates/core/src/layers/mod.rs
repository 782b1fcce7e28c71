//! Learnable building blocks. Every layer is causal in time: history frames
//! are prepended before filtering, zeros for a whole utterance or the
//! carried state when streaming, so both paths run the same arithmetic.

mod activation;
mod attention;
mod batchnorm;
mod cfsmn;
mod conv;
mod fsmn;
pub mod init;

use std::collections::HashMap;

pub use activation::split_leaky_relu;
pub use attention::CcbamLite;
pub use batchnorm::ComplexBatchNorm;
pub use cfsmn::Cfsmn;
pub use conv::{ComplexConv2d, ComplexDeconv};
pub use fsmn::Fsmn;

use crate::error::{Error, Result};
use crate::params::{BufferId, ParamId, ParameterStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    Eval,
}

/// Per-layer time history carried between calls when processing a stream
/// frame by frame.
#[derive(Clone, Debug, Default)]
pub struct StreamState {
    buffers: HashMap<String, Tensor>,
}

impl StreamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.buffers.get(key)
    }
}

/// Everything a layer needs for one forward pass.
pub struct Ctx<'t, 'a> {
    pub tape: &'t Tape,
    /// Registered parameters, indexed by [`ParamId`].
    pub params: &'a [Var<'t>],
    pub store: &'a ParameterStore,
    pub mode: Mode,
    pub stream: Option<&'a mut StreamState>,
    /// Running-statistic values computed in train mode, applied by the caller.
    pub bn_updates: Vec<(BufferId, Tensor)>,
}

impl<'t, 'a> Ctx<'t, 'a> {
    pub fn new(
        tape: &'t Tape,
        params: &'a [Var<'t>],
        store: &'a ParameterStore,
        mode: Mode,
    ) -> Self {
        Self {
            tape,
            params,
            store,
            mode,
            stream: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn with_stream(mut self, state: &'a mut StreamState) -> Self {
        self.stream = Some(state);
        self
    }

    pub fn p(&self, id: ParamId) -> Var<'t> {
        self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        self.store.buffer(id)
    }

    /// Prepends `frames` past frames to `x` along `axis`.
    pub fn history(&mut self, key: &str, x: Var<'t>, axis: usize, frames: usize) -> Result<Var<'t>> {
        if frames == 0 {
            return Ok(x);
        }
        let Some(state) = self.stream.as_deref_mut() else {
            return x.pad(axis, frames, 0);
        };
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(Error::Axis {
                axis,
                rank: shape.len(),
            });
        }
        let mut hist_shape = shape.clone();
        hist_shape[axis] = frames;
        let hist = match state.buffers.get(key) {
            Some(h) if h.shape() == hist_shape.as_slice() => h.clone(),
            Some(h) => {
                return Err(Error::shape(format!(
                    "stream state {key}: stored {:?}, need {hist_shape:?}",
                    h.shape()
                )))
            }
            None => Tensor::zeros(&hist_shape),
        };
        let joined = Var::concat(&[self.tape.constant(hist), x], axis)?;
        let len = shape[axis] + frames;
        state
            .buffers
            .insert(key.to_string(), joined.value().narrow(axis, len - frames, frames)?);
        Ok(joined)
    }
}
