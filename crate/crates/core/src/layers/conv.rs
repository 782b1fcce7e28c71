use rand::Rng;

use super::{init, Ctx};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::{CVar, Tensor, Var};

/// Causal complex 2-D convolution over `[batch, channels, time, freq]`.
///
/// `U_r = V_r*W_r - V_i*W_i`, `U_i = V_r*W_i + V_i*W_r`. Time is padded with
/// `kt - 1` past frames; frequency is filtered without padding.
#[derive(Clone, Debug)]
pub struct ComplexConv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub freq_stride: usize,
    /// `[out, in, kt, kf]` planes.
    pub w_re: ParamId,
    pub w_im: ParamId,
    pub bias: Option<(ParamId, ParamId)>,
}

impl ComplexConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        freq_stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let (kt, kf) = kernel;
        if kt == 0 || kf == 0 || freq_stride == 0 {
            return Err(Error::config(format!("{name}: zero kernel or stride")));
        }
        let shape = [out_channels, in_channels, kt, kf];
        let w = init::complex_glorot(&shape, in_channels * kt * kf, out_channels * kt * kf, rng);
        let w_re = store.add_param(format!("{name}.w_re"), w.re)?;
        let w_im = store.add_param(format!("{name}.w_im"), w.im)?;
        let bias = if bias {
            Some((
                store.add_param(format!("{name}.b_re"), Tensor::zeros(&[out_channels]))?,
                store.add_param(format!("{name}.b_im"), Tensor::zeros(&[out_channels]))?,
            ))
        } else {
            None
        };
        Ok(Self {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel,
            freq_stride,
            w_re,
            w_im,
            bias,
        })
    }

    /// Output bins for `freq` input bins.
    pub fn output_freq(&self, freq: usize) -> Option<usize> {
        (freq >= self.kernel.1).then(|| (freq - self.kernel.1) / self.freq_stride + 1)
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: CVar<'t>) -> Result<CVar<'t>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_channels || shape[3] < self.kernel.1 {
            return Err(Error::shape(format!(
                "{}: input {shape:?} needs [batch, {}, time, >= {}]",
                self.name, self.in_channels, self.kernel.1
            )));
        }
        let pad = self.kernel.0 - 1;
        let xr = ctx.history(&format!("{}.re", self.name), x.re, 2, pad)?;
        let xi = ctx.history(&format!("{}.im", self.name), x.im, 2, pad)?;
        let (wr, wi) = (ctx.p(self.w_re), ctx.p(self.w_im));
        let s = self.freq_stride;
        let re = xr.conv2d(wr, s)?.sub(xi.conv2d(wi, s)?)?;
        let im = xr.conv2d(wi, s)?.add(xi.conv2d(wr, s)?)?;
        add_bias(ctx, CVar { re, im }, self.bias)
    }
}

fn add_bias<'t>(ctx: &Ctx<'t, '_>, y: CVar<'t>, bias: Option<(ParamId, ParamId)>) -> Result<CVar<'t>> {
    let Some((br, bi)) = bias else {
        return Ok(y);
    };
    let c = y.shape()[1];
    let as_4d = |v: Var<'t>| v.reshape(&[1, c, 1, 1]);
    Ok(CVar {
        re: y.re.add(as_4d(ctx.p(br))?)?,
        im: y.im.add(as_4d(ctx.p(bi))?)?,
    })
}

/// Decoder counterpart of [`ComplexConv2d`]: transposed filtering along
/// frequency, causal valid filtering along time, then crop or zero-pad at
/// the top frequency edge to the size recorded by the encoder.
#[derive(Clone, Debug)]
pub struct ComplexDeconv {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub freq_stride: usize,
    /// `[in, out, kt, kf]` planes.
    pub w_re: ParamId,
    pub w_im: ParamId,
    pub bias: Option<(ParamId, ParamId)>,
}

impl ComplexDeconv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        freq_stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let (kt, kf) = kernel;
        if kt == 0 || kf == 0 || freq_stride == 0 {
            return Err(Error::config(format!("{name}: zero kernel or stride")));
        }
        let shape = [in_channels, out_channels, kt, kf];
        let w = init::complex_glorot(&shape, in_channels * kt * kf, out_channels * kt * kf, rng);
        let w_re = store.add_param(format!("{name}.w_re"), w.re)?;
        let w_im = store.add_param(format!("{name}.w_im"), w.im)?;
        let bias = if bias {
            Some((
                store.add_param(format!("{name}.b_re"), Tensor::zeros(&[out_channels]))?,
                store.add_param(format!("{name}.b_im"), Tensor::zeros(&[out_channels]))?,
            ))
        } else {
            None
        };
        Ok(Self {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel,
            freq_stride,
            w_re,
            w_im,
            bias,
        })
    }

    /// Transposed size before adjustment: `(freq - 1) * stride + kf`.
    pub fn raw_freq(&self, freq: usize) -> usize {
        (freq.max(1) - 1) * self.freq_stride + self.kernel.1
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: CVar<'t>, target_freq: usize) -> Result<CVar<'t>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::shape(format!(
                "{}: input {shape:?} needs [batch, {}, time, freq]",
                self.name, self.in_channels
            )));
        }
        let raw = self.raw_freq(shape[3]);
        if raw.abs_diff(target_freq) > self.kernel.1 {
            return Err(Error::shape(format!(
                "{}: transposed size {raw} cannot be fitted to {target_freq} bins",
                self.name
            )));
        }
        let pad = self.kernel.0 - 1;
        let xr = ctx.history(&format!("{}.re", self.name), x.re, 2, pad)?;
        let xi = ctx.history(&format!("{}.im", self.name), x.im, 2, pad)?;
        let (wr, wi) = (ctx.p(self.w_re), ctx.p(self.w_im));
        let s = self.freq_stride;
        let re = xr.conv_transpose_freq(wr, s)?.sub(xi.conv_transpose_freq(wi, s)?)?;
        let im = xr.conv_transpose_freq(wi, s)?.add(xi.conv_transpose_freq(wr, s)?)?;
        let fit = |v: Var<'t>| -> Result<Var<'t>> {
            if raw > target_freq {
                v.narrow(3, 0, target_freq)
            } else {
                v.pad(3, 0, target_freq - raw)
            }
        };
        add_bias(ctx, CVar { re: fit(re)?, im: fit(im)? }, self.bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::test_util::{param_tensors, random_complex, randomize};
    use crate::layers::{Mode, StreamState};
    use crate::tensor::{grad_check, ComplexTensor, GradCheckOptions, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn unit_example() {
        let mut store = ParameterStore::new();
        let conv = ComplexConv2d::new(&mut store, "c", 1, 1, (1, 1), 1, false, &mut rng()).unwrap();
        *store.param_mut(conv.w_re) = Tensor::ones(&[1, 1, 1, 1]);
        *store.param_mut(conv.w_im) = Tensor::full(&[1, 1, 1, 1], -1.0);
        assert_eq!(store.num_scalars(), 2);
        let tape = Tape::no_grad();
        let vars = store.register(&tape, false);
        let mut ctx = Ctx::new(&tape, &vars, &store, Mode::Eval);
        let v = ComplexTensor::new(Tensor::ones(&[1, 1, 1, 1]), Tensor::ones(&[1, 1, 1, 1])).unwrap();
        let u = conv.forward(&mut ctx, CVar::constant(&tape, &v)).unwrap().value();
        assert_eq!((u.re.data()[0], u.im.data()[0]), (2.0, 0.0));
    }

    #[test]
    fn real_inputs_reduce_to_real_convolution() {
        let mut store = ParameterStore::new();
        let conv = ComplexConv2d::new(&mut store, "c", 2, 3, (2, 5), 2, false, &mut rng()).unwrap();
        *store.param_mut(conv.w_im) = Tensor::zeros(&[3, 2, 2, 5]);
        let mut x = random_complex(&[1, 2, 4, 21], 1);
        x.im = Tensor::zeros(x.shape());
        let tape = Tape::no_grad();
        let vars = store.register(&tape, false);
        let mut ctx = Ctx::new(&tape, &vars, &store, Mode::Eval);
        let u = conv.forward(&mut ctx, CVar::constant(&tape, &x)).unwrap().value();
        let real = tape
            .constant(x.re.clone())
            .pad(2, 1, 0)
            .unwrap()
            .conv2d(tape.constant(store.param(conv.w_re).clone()), 2)
            .unwrap()
            .value();
        assert_eq!(u.re, *real);
        assert_eq!(u.im.max_abs(), 0.0);
        assert_eq!(u.shape(), &[1, 3, 4, 9]);
    }

    #[test]
    fn encoder_chain_and_narrow_input() {
        let mut store = ParameterStore::new();
        let conv = ComplexConv2d::new(&mut store, "c", 1, 1, (2, 5), 2, false, &mut rng()).unwrap();
        let mut f = 321;
        let mut chain = Vec::new();
        while let Some(next) = conv.output_freq(f) {
            chain.push(next);
            f = next;
            if chain.len() == 6 {
                break;
            }
        }
        assert_eq!(chain, vec![159, 78, 37, 17, 7, 2]);
        let tape = Tape::no_grad();
        let vars = store.register(&tape, false);
        let mut ctx = Ctx::new(&tape, &vars, &store, Mode::Eval);
        let x = CVar::constant(&tape, &ComplexTensor::zeros(&[1, 1, 3, 4]));
        assert!(matches!(conv.forward(&mut ctx, x), Err(Error::Shape(_))));
    }

    #[test]
    fn deconv_fits_ledger_sizes() {
        let mut store = ParameterStore::new();
        let d = ComplexDeconv::new(&mut store, "d", 2, 2, (2, 5), 2, true, &mut rng()).unwrap();
        assert_eq!(d.raw_freq(37), 77);
        assert_eq!(d.raw_freq(2), 7);
        let tape = Tape::no_grad();
        let vars = store.register(&tape, false);
        let mut ctx = Ctx::new(&tape, &vars, &store, Mode::Eval);
        let x = random_complex(&[1, 2, 3, 37], 2);
        let y = d.forward(&mut ctx, CVar::constant(&tape, &x), 78).unwrap().value();
        assert_eq!(y.shape(), &[1, 2, 3, 78]);
        // bias is zero, so the appended top bin is exactly zero
        assert_eq!(y.re.narrow(3, 77, 1).unwrap().max_abs(), 0.0);
        let z = d
            .forward(&mut ctx, CVar::constant(&tape, &ComplexTensor::zeros(&[1, 2, 3, 2])), 7)
            .unwrap()
            .value();
        assert_eq!(z.shape(), &[1, 2, 3, 7]);
        assert_eq!(z.max_part_abs(), 0.0);
        assert!(d.forward(&mut ctx, CVar::constant(&tape, &x), 90).is_err());
    }

    #[test]
    fn streaming_matches_batch() {
        let mut store = ParameterStore::new();
        let conv = ComplexConv2d::new(&mut store, "c", 2, 2, (2, 5), 2, true, &mut rng()).unwrap();
        let d = ComplexDeconv::new(&mut store, "d", 2, 2, (2, 5), 2, true, &mut rng()).unwrap();
        randomize(&mut store, 0.5, 3);
        let x = random_complex(&[1, 2, 6, 13], 4);
        fn run<'t>(
            conv: &ComplexConv2d,
            d: &ComplexDeconv,
            ctx: &mut Ctx<'t, '_>,
            x: &ComplexTensor,
        ) -> ComplexTensor {
            let h = conv.forward(ctx, CVar::constant(ctx.tape, x)).unwrap();
            d.forward(ctx, h, 13).unwrap().value()
        }
        let tape = Tape::no_grad();
        let vars = store.register(&tape, false);
        let whole = run(&conv, &d, &mut Ctx::new(&tape, &vars, &store, Mode::Eval), &x);
        let mut state = StreamState::new();
        for t in 0..6 {
            let tape = Tape::no_grad();
            let vars = store.register(&tape, false);
            let mut ctx = Ctx::new(&tape, &vars, &store, Mode::Eval).with_stream(&mut state);
            let y = run(&conv, &d, &mut ctx, &x.narrow(2, t, 1).unwrap());
            assert!(y.max_abs_diff(&whole.narrow(2, t, 1).unwrap()).unwrap() < 1e-12);
        }
        assert_eq!(state.len(), 4);
    }

    #[test]
    fn gradients() {
        let mut store = ParameterStore::new();
        let conv = ComplexConv2d::new(&mut store, "c", 2, 2, (2, 3), 2, true, &mut rng()).unwrap();
        let d = ComplexDeconv::new(&mut store, "d", 2, 1, (2, 3), 2, true, &mut rng()).unwrap();
        randomize(&mut store, 0.5, 5);
        let x = random_complex(&[1, 2, 3, 9], 6);
        let mut inputs = vec![x.re.clone(), x.im.clone()];
        inputs.extend(param_tensors(&store));
        let r = grad_check(
            |tape, v| {
                let mut ctx = Ctx::new(tape, &v[2..], &store, Mode::Eval);
                let h = conv.forward(&mut ctx, CVar::new(v[0], v[1])?)?;
                let y = d.forward(&mut ctx, h, 9)?;
                Ok(y.re.tanh().add(y.im.square())?.sum_all())
            },
            &inputs,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
