use rand::Rng;

use super::{init, Ctx};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::{Tensor, Var};

/// Real FSMN cell over `[sequences, length, dim]`:
///
/// ```text
/// h_i   = relu(W s_i + b)
/// p_i   = V h_i + v
/// out_i = s_i + p_i + sum_{tau=0..lookback} a_tau * p_{i-tau}
///                   + sum_{kappa=1..lookahead} c_kappa * p_{i+kappa}
/// ```
///
/// Positions outside the sequence contribute zero.
#[derive(Clone, Debug)]
pub struct Fsmn {
    pub name: String,
    pub dim: usize,
    pub hidden: usize,
    pub lookback: usize,
    pub lookahead: usize,
    /// `false` drops the ReLU, which makes the cell affine.
    pub relu: bool,
    /// `[hidden, dim]`
    pub w: ParamId,
    pub b: ParamId,
    /// `[dim, hidden]`
    pub v: ParamId,
    pub vb: ParamId,
    /// `[lookback + 1, dim]`
    pub a: ParamId,
    /// `[lookahead, dim]`, absent when `lookahead == 0`.
    pub c: Option<ParamId>,
}

impl Fsmn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        hidden: usize,
        lookback: usize,
        lookahead: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::config(format!("{name}: zero FSMN width")));
        }
        Ok(Self {
            name: name.to_string(),
            dim,
            hidden,
            lookback,
            lookahead,
            relu: true,
            w: store.add_param(format!("{name}.w"), init::uniform_fan_in(&[hidden, dim], dim, rng))?,
            b: store.add_param(format!("{name}.b"), Tensor::zeros(&[hidden]))?,
            v: store.add_param(format!("{name}.v"), init::uniform_fan_in(&[dim, hidden], hidden, rng))?,
            vb: store.add_param(format!("{name}.vb"), Tensor::zeros(&[dim]))?,
            a: store.add_param(format!("{name}.a"), Tensor::zeros(&[lookback + 1, dim]))?,
            c: if lookahead > 0 {
                Some(store.add_param(format!("{name}.c"), Tensor::zeros(&[lookahead, dim]))?)
            } else {
                None
            },
        })
    }

    /// `history_key` selects a causal sequence axis whose past is carried
    /// across streaming calls; `None` treats each sequence as complete.
    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, s: Var<'t>, history_key: Option<&str>) -> Result<Var<'t>> {
        let shape = s.shape();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(Error::shape(format!(
                "{}: input {shape:?} needs [sequences, length, {}]",
                self.name, self.dim
            )));
        }
        let (n, len) = (shape[0], shape[1]);
        let flat = s.reshape(&[n * len, self.dim])?;
        let mut h = flat.matmul_bt(ctx.p(self.w))?.add(ctx.p(self.b))?;
        if self.relu {
            h = h.relu();
        }
        let p = h
            .matmul_bt(ctx.p(self.v))?
            .add(ctx.p(self.vb))?
            .reshape(&[n, len, self.dim])?;
        let padded = match history_key {
            Some(key) => {
                if self.lookahead > 0 && ctx.stream.is_some() {
                    return Err(Error::config(format!(
                        "{}: look-ahead taps cannot run frame by frame",
                        self.name
                    )));
                }
                ctx.history(key, p, 1, self.lookback)?
            }
            None => p.pad(1, self.lookback, 0)?,
        };
        let padded = padded.pad(1, 0, self.lookahead)?;
        let memory = padded.memory_taps(ctx.p(self.a), self.c.map(|c| ctx.p(c)))?;
        s.add(p)?.add(memory)
    }
}
