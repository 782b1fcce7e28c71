use rand::Rng;

use super::{Ctx, Fsmn};
use crate::error::Result;
use crate::params::ParameterStore;
use crate::tensor::CVar;

/// Complex FSMN built from a real and an imaginary cell:
/// `out = F_r(S_r) - F_i(S_i) + j (F_r(S_i) + F_i(S_r))`.
#[derive(Clone, Debug)]
pub struct Cfsmn {
    pub name: String,
    pub real: Fsmn,
    pub imag: Fsmn,
}

impl Cfsmn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        hidden: usize,
        lookback: usize,
        lookahead: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            real: Fsmn::new(store, &format!("{name}.real"), dim, hidden, lookback, lookahead, rng)?,
            imag: Fsmn::new(store, &format!("{name}.imag"), dim, hidden, lookback, lookahead, rng)?,
        })
    }

    /// `s` is `[sequences, length, dim]`. With `causal`, the sequence axis is
    /// time and each of the four cell applications keeps its own history.
    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, s: CVar<'t>, causal: bool) -> Result<CVar<'t>> {
        let key = |part: &str| format!("{}.{part}", self.name);
        let (k_rr, k_ii, k_ri, k_ir) = (key("rr"), key("ii"), key("ri"), key("ir"));
        let pick = |k: &str| causal.then_some(k.to_owned());
        let rr = self.real.forward(ctx, s.re, pick(&k_rr).as_deref())?;
        let ii = self.imag.forward(ctx, s.im, pick(&k_ii).as_deref())?;
        let ri = self.real.forward(ctx, s.im, pick(&k_ri).as_deref())?;
        let ir = self.imag.forward(ctx, s.re, pick(&k_ir).as_deref())?;
        Ok(CVar {
            re: rr.sub(ii)?,
            im: ri.add(ir)?,
        })
    }
}
