use super::{Ctx, Mode};
use crate::error::{Error, Result};
use crate::params::{BufferId, ParamId, ParameterStore};
use crate::tensor::{CVar, Tensor, Var};

/// Complex batch normalization: per channel, the (real, imag) pairs are
/// centred, whitened with the inverse square root of their 2x2 covariance
/// and mapped through a learnable symmetric 2x2 scale and complex shift.
#[derive(Clone, Debug)]
pub struct ComplexBatchNorm {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma_rr: ParamId,
    pub gamma_ri: ParamId,
    pub gamma_ii: ParamId,
    pub beta_re: ParamId,
    pub beta_im: ParamId,
    pub mean_re: BufferId,
    pub mean_im: BufferId,
    pub var_rr: BufferId,
    pub var_ri: BufferId,
    pub var_ii: BufferId,
}

const AXES: [usize; 3] = [0, 2, 3];

impl ComplexBatchNorm {
    pub fn new(store: &mut ParameterStore, name: &str, channels: usize) -> Result<Self> {
        let c = [channels];
        let diag = Tensor::full(&c, std::f64::consts::FRAC_1_SQRT_2);
        Ok(Self {
            name: name.to_string(),
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma_rr: store.add_param(format!("{name}.gamma_rr"), diag.clone())?,
            gamma_ri: store.add_param(format!("{name}.gamma_ri"), Tensor::zeros(&c))?,
            gamma_ii: store.add_param(format!("{name}.gamma_ii"), diag)?,
            beta_re: store.add_param(format!("{name}.beta_re"), Tensor::zeros(&c))?,
            beta_im: store.add_param(format!("{name}.beta_im"), Tensor::zeros(&c))?,
            mean_re: store.add_buffer(format!("{name}.running_mean_re"), Tensor::zeros(&c))?,
            mean_im: store.add_buffer(format!("{name}.running_mean_im"), Tensor::zeros(&c))?,
            var_rr: store.add_buffer(format!("{name}.running_var_rr"), Tensor::ones(&c))?,
            var_ri: store.add_buffer(format!("{name}.running_var_ri"), Tensor::zeros(&c))?,
            var_ii: store.add_buffer(format!("{name}.running_var_ii"), Tensor::ones(&c))?,
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: CVar<'t>) -> Result<CVar<'t>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(format!(
                "{}: input {shape:?} needs [batch, {}, time, freq]",
                self.name, self.channels
            )));
        }
        let c = self.channels;
        let per_channel = |v: Var<'t>| v.reshape(&[1, c, 1, 1]);
        let (xc_r, xc_i, vrr, vri, vii) = match ctx.mode {
            Mode::Train => {
                let mu_r = x.re.mean_axes(&AXES, true)?;
                let mu_i = x.im.mean_axes(&AXES, true)?;
                let xc_r = x.re.sub(mu_r)?;
                let xc_i = x.im.sub(mu_i)?;
                let vrr = xc_r.square().mean_axes(&AXES, true)?;
                let vii = xc_i.square().mean_axes(&AXES, true)?;
                let vri = xc_r.mul(xc_i)?.mean_axes(&AXES, true)?;
                let batch = [mu_r, mu_i, vrr, vri, vii];
                if batch.iter().any(|v| !v.value().is_finite()) {
                    return Err(Error::Numeric(format!("{}: non-finite batch statistics", self.name)));
                }
                let targets = [self.mean_re, self.mean_im, self.var_rr, self.var_ri, self.var_ii];
                for (id, stat) in targets.into_iter().zip(batch) {
                    let mut running = ctx.buffer(id).clone();
                    running.scale_in_place(1.0 - self.momentum);
                    let mut fresh = stat.value().reshape(&[c])?;
                    fresh.scale_in_place(self.momentum);
                    running.add_assign(&fresh)?;
                    ctx.bn_updates.push((id, running));
                }
                (xc_r, xc_i, vrr.add_scalar(self.eps), vri, vii.add_scalar(self.eps))
            }
            Mode::Eval => {
                let buf = |id: BufferId| per_channel(ctx.tape.constant(ctx.buffer(id).clone()));
                let xc_r = x.re.sub(buf(self.mean_re)?)?;
                let xc_i = x.im.sub(buf(self.mean_im)?)?;
                (
                    xc_r,
                    xc_i,
                    buf(self.var_rr)?.add_scalar(self.eps),
                    buf(self.var_ri)?,
                    buf(self.var_ii)?.add_scalar(self.eps),
                )
            }
        };

        // closed-form inverse square root of [[vrr, vri], [vri, vii]]
        let s = vrr.mul(vii)?.sub(vri.square())?.sqrt();
        let t = vrr.add(vii)?.add(s.scale(2.0))?.sqrt();
        let inv = s.mul(t)?.recip();
        let w_rr = vii.add(s)?.mul(inv)?;
        let w_ii = vrr.add(s)?.mul(inv)?;
        let w_ri = vri.neg().mul(inv)?;
        let xh_r = w_rr.mul(xc_r)?.add(w_ri.mul(xc_i)?)?;
        let xh_i = w_ri.mul(xc_r)?.add(w_ii.mul(xc_i)?)?;

        let g_rr = per_channel(ctx.p(self.gamma_rr))?;
        let g_ri = per_channel(ctx.p(self.gamma_ri))?;
        let g_ii = per_channel(ctx.p(self.gamma_ii))?;
        let re = g_rr
            .mul(xh_r)?
            .add(g_ri.mul(xh_i)?)?
            .add(per_channel(ctx.p(self.beta_re))?)?;
        let im = g_ri
            .mul(xh_r)?
            .add(g_ii.mul(xh_i)?)?
            .add(per_channel(ctx.p(self.beta_im))?)?;
        Ok(CVar { re, im })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::test_util::{param_tensors, random_complex};
    use crate::tensor::{grad_check, ComplexTensor, GradCheckOptions, Tape};

    fn moments(y: &ComplexTensor, c: usize) -> [f64; 5] {
        let (b, t, f) = (y.shape()[0], y.shape()[2], y.shape()[3]);
        let n = (b * t * f) as f64;
        let (mut mr, mut mi) = (0.0, 0.0);
        let mut pairs = Vec::new();
        for bi in 0..b {
            for ti in 0..t {
                for fi in 0..f {
                    let (r, i) = (y.re.get(&[bi, c, ti, fi]), y.im.get(&[bi, c, ti, fi]));
                    mr += r;
                    mi += i;
                    pairs.push((r, i));
                }
            }
        }
        mr /= n;
        mi /= n;
        let (mut rr, mut ri, mut ii) = (0.0, 0.0, 0.0);
        for (r, i) in pairs {
            rr += (r - mr) * (r - mr);
            ri += (r - mr) * (i - mi);
            ii += (i - mi) * (i - mi);
        }
        [mr, mi, rr / n, ri / n, ii / n]
    }

    #[test]
    fn train_mode_whitens_to_gamma_squared() {
        let mut store = ParameterStore::new();
        let bn = ComplexBatchNorm::new(&mut store, "bn", 2).unwrap();
        *store.param_mut(bn.gamma_rr) = Tensor::new(&[2], vec![1.0, 0.5]).unwrap();
        *store.param_mut(bn.gamma_ri) = Tensor::new(&[2], vec![0.3, -0.2]).unwrap();
        *store.param_mut(bn.gamma_ii) = Tensor::new(&[2], vec![0.8, 1.5]).unwrap();
        // correlated, offset input
        let mut x = random_complex(&[4, 2, 50, 20], 1);
        for k in 0..x.numel() {
            let (r, i) = (x.re.data()[k], x.im.data()[k]);
            x.re.data_mut()[k] = 3.0 * r + 2.0;
            x.im.data_mut()[k] = 0.5 * r + 0.2 * i - 1.0;
        }
        let tape = Tape::no_grad();
        let vars = store.register(&tape, false);
        let mut ctx = Ctx::new(&tape, &vars, &store, Mode::Train);
        let y = bn.forward(&mut ctx, CVar::constant(&tape, &x)).unwrap().value();
        assert_eq!(ctx.bn_updates.len(), 5);
        for c in 0..2 {
            let g = |id| store.param(id).data()[c];
            let (a, b, d) = (g(bn.gamma_rr), g(bn.gamma_ri), g(bn.gamma_ii));
            let want = [0.0, 0.0, a * a + b * b, a * b + b * d, b * b + d * d];
            let got = moments(&y, c);
            assert!(got[0].abs() < 1e-6 && got[1].abs() < 1e-6, "{got:?}");
            for k in 2..5 {
                assert!((got[k] - want[k]).abs() < 1e-3, "{c} {k}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn eval_mode_is_frozen_and_white_input_passes_through_gamma() {
        let mut store = ParameterStore::new();
        let bn = ComplexBatchNorm::new(&mut store, "bn", 3).unwrap();
        let x = random_complex(&[1, 3, 4, 5], 2);
        let tape = Tape::no_grad();
        let vars = store.register(&tape, false);
        let mut ctx = Ctx::new(&tape, &vars, &store, Mode::Eval);
        let a = bn.forward(&mut ctx, CVar::constant(&tape, &x)).unwrap().value();
        let b = bn.forward(&mut ctx, CVar::constant(&tape, &x)).unwrap().value();
        assert_eq!(a, b);
        assert!(ctx.bn_updates.is_empty());
        // identity running covariance: output = x / sqrt(2) up to the eps shrink
        let scale = std::f64::consts::FRAC_1_SQRT_2 / (1.0 + 1e-5f64).sqrt();
        for k in 0..x.numel() {
            assert!((a.re.data()[k] - scale * x.re.data()[k]).abs() < 1e-12);
            assert!((a.im.data()[k] - scale * x.im.data()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_in_both_modes() {
        let mut store = ParameterStore::new();
        let bn = ComplexBatchNorm::new(&mut store, "bn", 2).unwrap();
        store.set_buffer(bn.var_ri, Tensor::new(&[2], vec![0.3, -0.1]).unwrap()).unwrap();
        store.set_buffer(bn.mean_re, Tensor::new(&[2], vec![0.2, -0.4]).unwrap()).unwrap();
        let x = random_complex(&[2, 2, 3, 4], 3);
        let mut inputs = vec![x.re.clone(), x.im.clone()];
        inputs.extend(param_tensors(&store));
        for mode in [Mode::Train, Mode::Eval] {
            let r = grad_check(
                |tape, v| {
                    let mut ctx = Ctx::new(tape, &v[2..], &store, mode);
                    let y = bn.forward(&mut ctx, CVar::new(v[0], v[1])?)?;
                    let w = tape.constant(x.re.map(|q| q.sin()));
                    Ok(y.re.mul(w)?.add(y.im.tanh())?.sum_all())
                },
                &inputs,
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.passed, "{mode:?} {r:?}");
        }
    }
}
