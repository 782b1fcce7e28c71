use rand::Rng;

use super::{init, Ctx};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::{CVar, Tensor, Var};

/// Lightweight complex attention for a skip pathway.
///
/// Channel gate: the magnitude map is averaged over frequency for every
/// (channel, frame), passed through a `C -> C/8 -> C` bottleneck and a
/// sigmoid, and multiplied into both planes. Spatial gate: mean and max of
/// the gated magnitudes across channels form a 2-channel map, filtered by a
/// causal 2x5 convolution (frequency padded by 2 on each side) and a sigmoid.
/// Both gates are real and in `(0, 1)`, so phase is preserved and magnitude
/// can only shrink.
#[derive(Clone, Debug)]
pub struct CcbamLite {
    pub name: String,
    pub channels: usize,
    pub reduced: usize,
    /// `[reduced, channels]`
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    /// `[channels, reduced]`
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
    /// `[1, 2, 2, 5]`
    pub spatial_w: ParamId,
    pub spatial_b: ParamId,
}

const MAG_FLOOR: f64 = 1e-8;
const SPATIAL_KERNEL: (usize, usize) = (2, 5);

impl CcbamLite {
    pub fn new<R: Rng + ?Sized>(store: &mut ParameterStore, name: &str, channels: usize, rng: &mut R) -> Result<Self> {
        let reduced = (channels / 8).max(2);
        let (kt, kf) = SPATIAL_KERNEL;
        Ok(Self {
            name: name.to_string(),
            channels,
            reduced,
            fc1_w: store.add_param(
                format!("{name}.fc1_w"),
                init::uniform_fan_in(&[reduced, channels], channels, rng),
            )?,
            fc1_b: store.add_param(format!("{name}.fc1_b"), Tensor::zeros(&[reduced]))?,
            fc2_w: store.add_param(
                format!("{name}.fc2_w"),
                init::uniform_fan_in(&[channels, reduced], reduced, rng),
            )?,
            fc2_b: store.add_param(format!("{name}.fc2_b"), Tensor::zeros(&[channels]))?,
            spatial_w: store.add_param(
                format!("{name}.spatial_w"),
                init::uniform_fan_in(&[1, 2, kt, kf], 2 * kt * kf, rng),
            )?,
            spatial_b: store.add_param(format!("{name}.spatial_b"), Tensor::zeros(&[1]))?,
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
        let (b, c, t, _) = (shape[0], shape[1], shape[2], shape[3]);

        let mag = x.magnitude(MAG_FLOOR)?;
        let pooled = mag
            .mean_axes(&[3], false)?
            .permute(&[0, 2, 1])?
            .reshape(&[b * t, c])?;
        let hidden = pooled
            .matmul_bt(ctx.p(self.fc1_w))?
            .add(ctx.p(self.fc1_b))?
            .relu();
        let gate = hidden
            .matmul_bt(ctx.p(self.fc2_w))?
            .add(ctx.p(self.fc2_b))?
            .sigmoid()
            .reshape(&[b, t, c])?
            .permute(&[0, 2, 1])?
            .reshape(&[b, c, t, 1])?;
        let x = x.mul_real(gate)?;

        let gated_mag = mag.mul(gate)?;
        let stats = Var::concat(
            &[
                gated_mag.mean_axes(&[1], true)?,
                gated_mag.max_axis(1, true)?,
            ],
            1,
        )?;
        let (kt, kf) = SPATIAL_KERNEL;
        let stats = stats.pad(3, kf / 2, kf / 2)?;
        let stats = ctx.history(&format!("{}.spatial", self.name), stats, 2, kt - 1)?;
        let spatial = stats
            .conv2d(ctx.p(self.spatial_w), 1)?
            .add(ctx.p(self.spatial_b))?
            .sigmoid();
        x.mul_real(spatial)
    }

    /// Sets both gates to exactly one: zero weights, saturated biases.
    pub fn saturate(&self, store: &mut ParameterStore) {
        for id in [self.fc2_w, self.spatial_w] {
            let shape = store.param(id).shape().to_vec();
            *store.param_mut(id) = Tensor::zeros(&shape);
        }
        *store.param_mut(self.fc2_b) = Tensor::full(&[self.channels], 40.0);
        *store.param_mut(self.spatial_b) = Tensor::full(&[1], 40.0);
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

    fn layer(seed: u64) -> (ParameterStore, CcbamLite) {
        let mut store = ParameterStore::new();
        let a = CcbamLite::new(&mut store, "att", 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (store, a)
    }

    fn run(store: &ParameterStore, a: &CcbamLite, x: &ComplexTensor) -> ComplexTensor {
        let tape = Tape::no_grad();
        let vars = store.register(&tape, false);
        let mut ctx = Ctx::new(&tape, &vars, store, Mode::Eval);
        a.forward(&mut ctx, CVar::constant(&tape, x)).unwrap().value()
    }

    #[test]
    fn saturated_gates_are_identity() {
        let (mut store, a) = layer(1);
        a.saturate(&mut store);
        let x = random_complex(&[2, 4, 3, 7], 2);
        assert_eq!(run(&store, &a, &x), x);
    }

    #[test]
    fn gating_never_increases_magnitude() {
        let (mut store, a) = layer(3);
        randomize(&mut store, 1.0, 4);
        let x = random_complex(&[1, 4, 5, 9], 5);
        let y = run(&store, &a, &x);
        for k in 0..x.numel() {
            let mx = x.re.data()[k].hypot(x.im.data()[k]);
            let my = y.re.data()[k].hypot(y.im.data()[k]);
            assert!(my <= mx);
        }
    }

    #[test]
    fn causal_and_streamable() {
        let (mut store, a) = layer(6);
        randomize(&mut store, 1.0, 7);
        let x = random_complex(&[1, 4, 6, 9], 8);
        let base = run(&store, &a, &x);
        let noise = random_complex(&[1, 4, 6, 9], 9);
        for t in 0..5 {
            let mut y = x.clone();
            for ti in t + 1..6 {
                for ci in 0..4 {
                    for f in 0..9 {
                        y.re.set(&[0, ci, ti, f], noise.re.get(&[0, ci, ti, f]));
                        y.im.set(&[0, ci, ti, f], noise.im.get(&[0, ci, ti, f]));
                    }
                }
            }
            let out = run(&store, &a, &y);
            let d = out.narrow(2, 0, t + 1).unwrap().max_abs_diff(&base.narrow(2, 0, t + 1).unwrap());
            assert!(d.unwrap() < 1e-12);
        }
        let mut state = StreamState::new();
        for t in 0..6 {
            let tape = Tape::no_grad();
            let vars = store.register(&tape, false);
            let mut ctx = Ctx::new(&tape, &vars, &store, Mode::Eval).with_stream(&mut state);
            let y = a
                .forward(&mut ctx, CVar::constant(&tape, &x.narrow(2, t, 1).unwrap()))
                .unwrap()
                .value();
            assert!(y.max_abs_diff(&base.narrow(2, t, 1).unwrap()).unwrap() < 1e-12);
        }
    }

    #[test]
    fn gradients() {
        let (mut store, a) = layer(10);
        randomize(&mut store, 0.5, 11);
        let x = random_complex(&[1, 4, 3, 6], 12);
        let mut inputs = vec![x.re, x.im];
        inputs.extend(param_tensors(&store));
        let r = grad_check(
            |tape, v| {
                let mut ctx = Ctx::new(tape, &v[2..], &store, Mode::Eval);
                let y = a.forward(&mut ctx, CVar::new(v[0], v[1])?)?;
                Ok(y.re.tanh().add(y.im.square())?.sum_all())
            },
            &inputs,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
