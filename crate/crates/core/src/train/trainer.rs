use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{clip_global_norm, Adam};
use super::eval::evaluate_pairs;
use crate::dsp::{AudioBuffer, Stft};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::Frcrn;
use crate::objective::{cirm_target, joint_loss_var, EPS};
use crate::params::ParameterStore;
use crate::synth::Manifest;
use crate::tensor::{CVar, ComplexTensor, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Per-epoch multiplicative decay.
    pub lr_decay: f64,
    pub max_epochs: usize,
    /// Evaluations without a validation improvement before stopping.
    pub patience: usize,
    /// Weight of the mask term.
    pub lambda: f64,
    pub seed: u64,
    /// Validate every this many epochs.
    pub eval_interval: usize,
    /// Global gradient norm cap; 0 disables clipping.
    pub grad_clip: f64,
    /// Random crop length per example; whole pairs when absent.
    pub crop_s: Option<f64>,
    /// Tail share of the training manifest held out when no validation
    /// manifest is given.
    pub val_fraction: f64,
    pub max_steps: Option<usize>,
    pub max_wall_s: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            lr: 1e-3,
            lr_decay: 0.98,
            max_epochs: 120,
            patience: 10,
            lambda: 1.0,
            seed: 0,
            eval_interval: 1,
            grad_clip: 5.0,
            crop_s: None,
            val_fraction: 0.1,
            max_steps: None,
            max_wall_s: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("train: {m}")));
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_interval == 0 {
            return bad("batch_size, max_epochs and eval_interval must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr must be positive and lr_decay in (0, 1]");
        }
        if !(self.lambda >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("lambda and grad_clip must be non-negative");
        }
        if self.crop_s.is_some_and(|c| !(c > 0.0)) {
            return bad("crop_s must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

/// One clean/noisy pair held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub clean: AudioBuffer,
    pub noisy: AudioBuffer,
}

impl Pair {
    pub fn new(clean: AudioBuffer, noisy: AudioBuffer) -> Result<Self> {
        if clean.len() != noisy.len() || clean.sample_rate != noisy.sample_rate {
            return Err(Error::Data("clean and noisy differ in length or rate".into()));
        }
        Ok(Self { clean, noisy })
    }

    fn crop(&self, start: usize, len: usize) -> Result<Pair> {
        let sr = self.clean.sample_rate;
        Ok(Pair {
            clean: AudioBuffer::new(self.clean.samples[start..start + len].to_vec(), sr)?,
            noisy: AudioBuffer::new(self.noisy.samples[start..start + len].to_vec(), sr)?,
        })
    }
}

pub fn load_pairs(manifest: &Manifest) -> Result<Vec<Pair>> {
    (0..manifest.len())
        .map(|i| {
            let (c, n) = manifest.load_pair(i)?;
            Pair::new(c, n)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

fn stack(parts: &[ComplexTensor]) -> Result<ComplexTensor> {
    let views: Vec<ComplexTensor> = parts
        .iter()
        .map(|p| {
            let mut s = vec![1];
            s.extend_from_slice(p.shape());
            p.reshape(&s)
        })
        .collect::<Result<_>>()?;
    ComplexTensor::concat(&views.iter().collect::<Vec<_>>(), 0)
}

/// Loss and parameter gradients of one equal-length batch, without
/// updating anything.
pub fn loss_and_grads(
    model: &Frcrn,
    batch: &[Pair],
    lambda: f64,
) -> Result<(f64, Vec<Tensor>, Vec<(crate::params::BufferId, Tensor)>)> {
    let len = batch.first().ok_or_else(|| Error::Data("empty batch".into()))?.clean.len();
    if batch.iter().any(|p| p.clean.len() != len) {
        return Err(Error::Data("batch pairs differ in length".into()));
    }
    let stft = Stft::new(&model.config().stft)?;
    let mut noisy = Vec::with_capacity(batch.len());
    let mut clean = Vec::with_capacity(batch.len());
    let mut reference = Vec::new();
    for p in batch {
        let x = stft.analyze(&p.noisy.samples)?;
        let y = stft.analyze(&p.clean.samples)?;
        reference.extend(stft.overlap_add(&y)?);
        noisy.push(x);
        clean.push(y);
    }
    let x = stack(&noisy)?;
    let y = stack(&clean)?;
    let samples = reference.len() / batch.len();

    let tape = Tape::new();
    let vars = model.store.register(&tape, true);
    let mut ctx = model.ctx(&tape, &vars);
    let out = model.forward_spec(&mut ctx, &x)?;
    let estimate = stft.istft_var(out.enhanced)?;
    let target = cirm_target(&out.input.value(), &model.layout().split(&y)?, EPS, true)?;
    let loss = joint_loss_var(
        tape.constant(Tensor::new(&[batch.len(), samples], reference)?),
        estimate,
        CVar::constant(&tape, &target.values),
        out.mask,
        lambda,
    )?;
    let value = loss.item()?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss {value}")));
    }
    let grads = tape.backward(loss)?;
    let updates = std::mem::take(&mut ctx.bn_updates);
    Ok((value, model.store.collect_grads(&grads, &vars), updates))
}

/// Forward, backward, clipping and one Adam update in train mode.
pub fn train_step(model: &mut Frcrn, adam: &mut Adam, batch: &[Pair], lr: f64, cfg: &TrainConfig) -> Result<StepStats> {
    let prev = model.mode;
    model.mode = Mode::Train;
    let res = loss_and_grads(model, batch, cfg.lambda);
    model.mode = prev;
    let (loss, mut grads, updates) = res?;
    let grad_norm = clip_global_norm(&mut grads, cfg.grad_clip);
    adam.step(&mut model.store, &grads, lr)?;
    model.apply_bn_updates(updates)?;
    Ok(StepStats { loss, grad_norm })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_si_snr: Option<f64>,
    pub wall_time_s: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
    /// Validation SI-SNR of the untrained model.
    pub baseline_val_si_snr: Option<f64>,
    pub best_val_si_snr: Option<f64>,
    /// Epoch of the restored weights; `None` means the initial weights.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub wall_time_s: f64,
}

fn mean_val_si_snr(model: &Frcrn, val: &[Pair]) -> Result<f64> {
    Ok(evaluate_pairs(model, val)?.mean_enhanced())
}

/// Mini-batch training with per-epoch shuffling, learning-rate decay,
/// validation-based early stopping and best-checkpoint restoration. With
/// `out_dir`, writes `train_log.jsonl`, `last.ckpt` and `best.ckpt`.
pub fn train(
    model: &mut Frcrn,
    train_pairs: &[Pair],
    val_pairs: &[Pair],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    let win = model.config().stft.win_samples;
    let sr = model.config().sample_rate;
    let crop = cfg.crop_s.map(|c| (c * sr as f64).round() as usize);
    for p in train_pairs.iter().chain(val_pairs) {
        if p.clean.sample_rate != sr {
            return Err(Error::Data(format!("pair at {} Hz, model at {sr} Hz", p.clean.sample_rate)));
        }
        if p.clean.len() < crop.unwrap_or(0).max(win) {
            return Err(Error::Data(format!("a pair of {} samples is too short", p.clean.len())));
        }
    }
    let mut log = match out_dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            Some(fs::File::create(d.join("train_log.jsonl"))?)
        }
        None => None,
    };
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.store);
    let mut best_store: ParameterStore = model.store.clone();
    let mut best_epoch = None;
    let baseline = if val_pairs.is_empty() {
        None
    } else {
        Some(mean_val_si_snr(model, val_pairs)?)
    };
    let mut best_val = baseline;
    let mut since_best = 0usize;
    let mut steps = 0usize;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();

    'outer: for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let len = chunk.iter().map(|&i| train_pairs[i].clean.len()).min().unwrap_or(0);
            let len = crop.map_or(len, |c| c.min(len));
            let batch: Vec<Pair> = chunk
                .iter()
                .map(|&i| {
                    let p = &train_pairs[i];
                    let off = if p.clean.len() > len { rng.gen_range(0..=p.clean.len() - len) } else { 0 };
                    p.crop(off, len)
                })
                .collect::<Result<_>>()?;
            let stats = match train_step(model, &mut adam, &batch, lr, cfg) {
                Ok(s) => s,
                Err(e @ Error::Numeric(_)) => {
                    model.store = best_store;
                    return Err(Error::Numeric(format!(
                        "{e} at epoch {epoch}, step {steps}; best weights restored"
                    )));
                }
                Err(e) => return Err(e),
            };
            loss_sum += stats.loss;
            batches += 1;
            steps += 1;
            let out_of_budget = cfg.max_steps.is_some_and(|m| steps >= m)
                || cfg.max_wall_s.is_some_and(|w| start.elapsed().as_secs_f64() >= w);
            if out_of_budget {
                let entry = finish_epoch(model, val_pairs, cfg, epoch, lr, loss_sum / batches as f64, steps, start, true)?;
                track(model, &mut best_store, &mut best_epoch, &mut best_val, &mut since_best, &entry, val_pairs);
                write_log(&mut log, &entry)?;
                epochs.push(entry);
                break 'outer;
            }
        }
        let entry = finish_epoch(model, val_pairs, cfg, epoch, lr, loss_sum / batches as f64, steps, start, false)?;
        let evaluated = entry.val_si_snr.is_some();
        track(model, &mut best_store, &mut best_epoch, &mut best_val, &mut since_best, &entry, val_pairs);
        write_log(&mut log, &entry)?;
        epochs.push(entry);
        if let Some(d) = out_dir {
            model.save(&d.join("last.ckpt"))?;
        }
        if evaluated && since_best > cfg.patience {
            stopped_early = true;
            break;
        }
    }
    if let Some(d) = out_dir {
        model.save(&d.join("last.ckpt"))?;
    }
    if val_pairs.is_empty() {
        best_epoch = epochs.last().map(|e: &EpochLog| e.epoch);
    } else {
        model.store = best_store;
    }
    if let Some(d) = out_dir {
        model.save(&d.join("best.ckpt"))?;
    }
    Ok(TrainSummary {
        epochs,
        steps,
        baseline_val_si_snr: baseline,
        best_val_si_snr: best_val,
        best_epoch,
        stopped_early,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch(
    model: &Frcrn,
    val: &[Pair],
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
    train_loss: f64,
    steps: usize,
    start: Instant,
    force_eval: bool,
) -> Result<EpochLog> {
    let due = force_eval || (epoch + 1) % cfg.eval_interval == 0 || epoch + 1 == cfg.max_epochs;
    let val_si_snr = if due && !val.is_empty() {
        Some(mean_val_si_snr(model, val)?)
    } else {
        None
    };
    let entry = EpochLog {
        epoch,
        lr,
        train_loss,
        val_si_snr,
        wall_time_s: start.elapsed().as_secs_f64(),
        steps,
    };
    log::info!(
        "epoch {epoch}: lr {lr:.3e}, loss {train_loss:.4}, val {:?}, {steps} steps",
        entry.val_si_snr
    );
    Ok(entry)
}

fn track(
    model: &Frcrn,
    best_store: &mut ParameterStore,
    best_epoch: &mut Option<usize>,
    best_val: &mut Option<f64>,
    since_best: &mut usize,
    entry: &EpochLog,
    val: &[Pair],
) {
    if val.is_empty() {
        *best_store = model.store.clone();
        return;
    }
    if let Some(v) = entry.val_si_snr {
        if best_val.map_or(true, |b| v > b) {
            *best_val = Some(v);
            *best_epoch = Some(entry.epoch);
            *best_store = model.store.clone();
            *since_best = 0;
        } else {
            *since_best += 1;
        }
    }
}

fn write_log(log: &mut Option<fs::File>, entry: &EpochLog) -> Result<()> {
    if let Some(f) = log {
        let line = serde_json::to_string(entry).map_err(|e| Error::Data(format!("log serialization: {e}")))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}
