//! Named central-difference checks over every layer, the objective and
//! the whole model, shared by the test suite and the `gradcheck` command.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{Stft, StftConfig, Window};
use crate::error::{Error, Result};
use crate::layers::{
    split_leaky_relu, CcbamLite, Cfsmn, ComplexBatchNorm, ComplexConv2d, ComplexDeconv, Ctx, Fsmn, Mode,
};
use crate::model::{Frcrn, ModelConfig};
use crate::objective::{cirm_target, joint_loss_var, si_snr_var, EPS};
use crate::params::ParameterStore;
use crate::tensor::{grad_check, CVar, ComplexTensor, GradCheckOptions, GradCheckReport, Tape, Tensor, Var};

pub const MODULES: &[&str] = &[
    "activation",
    "conv",
    "deconv",
    "batchnorm",
    "fsmn",
    "cfsmn",
    "attention",
    "istft",
    "si_snr",
    "model",
];

pub fn options() -> GradCheckOptions {
    GradCheckOptions::default()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_complex(shape: &[usize], seed: u64) -> ComplexTensor {
    let mut r = rng(seed);
    ComplexTensor::new(Tensor::randn(shape, 1.0, &mut r), Tensor::randn(shape, 1.0, &mut r)).expect("same shape")
}

/// Fresh noise in every parameter so zero-initialized ones are exercised.
fn randomize(store: &mut ParameterStore, std: f64, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<_> = store.param_ids().collect();
    for id in ids {
        let shape = store.param(id).shape().to_vec();
        *store.param_mut(id) = Tensor::randn(&shape, std, &mut r);
    }
}

fn params(store: &ParameterStore) -> Vec<Tensor> {
    store.param_ids().map(|id| store.param(id).clone()).collect()
}

/// Asymmetric scalar read-out of a complex output.
fn readout<'t>(tape: &'t Tape, y: CVar<'t>, seed: u64) -> Result<Var<'t>> {
    let w = random_complex(&y.shape(), seed);
    Ok(y.re.mul(tape.constant(w.re))?.add(y.im.tanh().mul(tape.constant(w.im))?)?.sum_all())
}

/// Checks a layer on input `x` plus every parameter of `store`.
fn check_layer<F>(store: &ParameterStore, x: &ComplexTensor, mode: Mode, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Ctx<'t, '_>, CVar<'t>) -> Result<CVar<'t>>,
{
    let mut inputs = vec![x.re.clone(), x.im.clone()];
    inputs.extend(params(store));
    grad_check(
        |tape, v| {
            let mut ctx = Ctx::new(tape, &v[2..], store, mode);
            let y = f(&mut ctx, CVar::new(v[0], v[1])?)?;
            readout(tape, y, 99)
        },
        &inputs,
        &options(),
    )
}

/// Toy model used for the end-to-end check: 8 channels, 2 blocks,
/// 37 bins, 6 frames.
pub fn toy_model_config() -> ModelConfig {
    let mut c = ModelConfig::wideband().resized(8, 2);
    c.stft = StftConfig {
        win_samples: 72,
        hop_samples: 36,
        fft_size: 72,
        window: Window::Hann,
    };
    c.lookback = 3;
    c
}

fn model_check() -> Result<GradCheckReport> {
    let mut model = Frcrn::new(toy_model_config(), 3)?;
    randomize(&mut model.store, 0.3, 4);
    let stft = Stft::new(&model.config().stft)?;
    let frames = 6;
    let len = model.config().stft.output_len(frames);
    let mut r = rng(5);
    let clean: Vec<f64> = (0..len).map(|i| (i as f64 * 0.21).sin() * 0.5).collect();
    let noisy: Vec<f64> = clean
        .iter()
        .map(|c| c + 0.3 * Tensor::randn(&[1], 1.0, &mut r).data()[0])
        .collect();
    let x = stft.analyze(&noisy)?;
    let y = stft.analyze(&clean)?;
    let bins = x.shape()[1];
    let xb = x.reshape(&[1, frames, bins])?;
    let reference = Tensor::new(&[1, len], stft.overlap_add(&y)?)?;
    let target = cirm_target(&model.layout().split(&xb)?, &model.layout().split(&y.reshape(&[1, frames, bins])?)?, EPS, true)?;
    let opts = GradCheckOptions {
        max_elements_per_input: Some(4),
        ..options()
    };
    let model = &model;
    grad_check(
        |tape, v| {
            let mut ctx = Ctx::new(tape, v, &model.store, Mode::Train);
            let out = model.forward_spec(&mut ctx, &xb)?;
            let est = stft.istft_var(out.enhanced)?;
            joint_loss_var(
                tape.constant(reference.clone()),
                est,
                CVar::constant(tape, &target.values),
                out.mask,
                1.0,
            )
        },
        &params(&model.store),
        &opts,
    )
}

/// Runs one named check.
pub fn run(module: &str) -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let mut r = rng(1);
    match module {
        "activation" => check_layer(&store, &random_complex(&[2, 3, 4], 2), Mode::Eval, |_, x| {
            split_leaky_relu(x, 0.01)
        }),
        "conv" => {
            let conv = ComplexConv2d::new(&mut store, "conv", 2, 3, (2, 5), 2, true, &mut r)?;
            randomize(&mut store, 0.5, 2);
            check_layer(&store, &random_complex(&[2, 2, 4, 11], 3), Mode::Eval, |ctx, x| conv.forward(ctx, x))
        }
        "deconv" => {
            let d = ComplexDeconv::new(&mut store, "deconv", 3, 2, (2, 5), 2, true, &mut r)?;
            randomize(&mut store, 0.5, 2);
            check_layer(&store, &random_complex(&[2, 3, 4, 4], 3), Mode::Eval, |ctx, x| d.forward(ctx, x, 11))
        }
        "batchnorm" => {
            let bn = ComplexBatchNorm::new(&mut store, "bn", 2)?;
            randomize(&mut store, 0.5, 2);
            let x = random_complex(&[2, 2, 3, 4], 3);
            let train = check_layer(&store, &x, Mode::Train, |ctx, x| bn.forward(ctx, x))?;
            let eval = check_layer(&store, &x, Mode::Eval, |ctx, x| bn.forward(ctx, x))?;
            Ok(if train.max_rel_error >= eval.max_rel_error { train } else { eval })
        }
        "fsmn" => {
            let f = Fsmn::new(&mut store, "fsmn", 3, 4, 2, 1, &mut r)?;
            randomize(&mut store, 0.5, 2);
            let x = random_complex(&[2, 5, 3], 3);
            check_layer(&store, &x, Mode::Eval, |ctx, x| {
                let re = f.forward(ctx, x.re, None)?;
                let im = f.forward(ctx, x.im, Some("h"))?;
                CVar::new(re, im)
            })
        }
        "cfsmn" => {
            let f = Cfsmn::new(&mut store, "cfsmn", 3, 4, 2, 0, &mut r)?;
            randomize(&mut store, 0.5, 2);
            let x = random_complex(&[2, 5, 3], 3);
            let causal = check_layer(&store, &x, Mode::Eval, |ctx, x| f.forward(ctx, x, true))?;
            let free = check_layer(&store, &x, Mode::Eval, |ctx, x| f.forward(ctx, x, false))?;
            Ok(if causal.max_rel_error >= free.max_rel_error { causal } else { free })
        }
        "attention" => {
            let a = CcbamLite::new(&mut store, "att", 4, &mut r)?;
            randomize(&mut store, 0.5, 2);
            check_layer(&store, &random_complex(&[2, 4, 3, 6], 3), Mode::Eval, |ctx, x| a.forward(ctx, x))
        }
        "istft" => {
            let cfg = StftConfig {
                win_samples: 16,
                hop_samples: 8,
                fft_size: 16,
                window: Window::Hann,
            };
            let stft = Stft::new(&cfg)?;
            let x = random_complex(&[2, 4, cfg.bins()], 3);
            let w = Tensor::randn(&[2, cfg.output_len(4)], 1.0, &mut r);
            grad_check(
                |tape, v| {
                    let y = stft.istft_var(CVar::new(v[0], v[1])?)?;
                    Ok(y.mul(tape.constant(w.clone()))?.sum_all())
                },
                &[x.re, x.im],
                &options(),
            )
        }
        "si_snr" => {
            let reference = Tensor::randn(&[3, 40], 1.0, &mut r);
            let est = Tensor::randn(&[3, 40], 1.0, &mut r);
            let t = random_complex(&[3, 2, 5], 4);
            let m = random_complex(&[3, 2, 5], 5);
            let snr = grad_check(
                |_, v| Ok(si_snr_var(v[0], v[1])?.sum_all()),
                &[reference.clone(), est.clone()],
                &options(),
            )?;
            let joint = grad_check(
                |tape, v| {
                    joint_loss_var(
                        tape.constant(reference.clone()),
                        v[0],
                        CVar::constant(tape, &t),
                        CVar::new(v[1], v[2])?,
                        0.7,
                    )
                },
                &[est.clone(), m.re.clone(), m.im.clone()],
                &options(),
            )?;
            Ok(if snr.max_rel_error >= joint.max_rel_error { snr } else { joint })
        }
        "model" => model_check(),
        other => Err(Error::config(format!(
            "unknown gradcheck module {other:?} (one of {})",
            MODULES.join(", ")
        ))),
    }
}
