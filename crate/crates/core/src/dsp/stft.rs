use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use super::AudioBuffer;
use crate::error::{Error, Result};
use crate::tensor::{CVar, ComplexTensor, Tensor, Var};

/// Denominators of the overlap-add normalization below this are treated as
/// uncovered samples.
const MIN_DENOMINATOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
    Rectangular,
}

impl Window {
    pub fn values(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub win_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub window: Window,
}

impl StftConfig {
    /// 20 ms window, 10 ms hop, 640-point FFT at 16 kHz.
    pub fn wideband() -> Self {
        Self {
            win_samples: 320,
            hop_samples: 160,
            fft_size: 640,
            window: Window::Hann,
        }
    }

    /// 20 ms window, 10 ms hop, 1920-point FFT at 48 kHz.
    pub fn fullband() -> Self {
        Self {
            win_samples: 960,
            hop_samples: 480,
            fft_size: 1920,
            window: Window::Hann,
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of full frames in a signal of `len` samples, or `None` when it
    /// is shorter than one window.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        (len >= self.win_samples).then(|| (len - self.win_samples) / self.hop_samples + 1)
    }

    /// Length of the overlap-add output for `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop_samples + self.win_samples
        }
    }

    /// Samples covered by every frame that can overlap them:
    /// `[win - hop, frames * hop)`.
    pub fn interior(&self, frames: usize) -> std::ops::Range<usize> {
        let start = self.win_samples - self.hop_samples;
        start..(frames * self.hop_samples).max(start)
    }

    /// Algorithmic latency of frame-by-frame processing, in samples.
    pub fn latency_samples(&self) -> usize {
        self.win_samples + self.hop_samples
    }

    pub fn validate(&self) -> Result<()> {
        let (win, hop, n) = (self.win_samples, self.hop_samples, self.fft_size);
        if hop == 0 || hop > win || win > n {
            return Err(Error::config(format!(
                "stft needs 0 < hop <= win <= fft, got hop={hop} win={win} fft={n}"
            )));
        }
        if n % 2 != 0 {
            return Err(Error::config(format!("fft size {n} must be even")));
        }
        let w = self.window.values(win);
        let mut sum = vec![0.0; hop];
        let mut sum_sq = vec![0.0; hop];
        for (m, &v) in w.iter().enumerate() {
            sum[m % hop] += v;
            sum_sq[m % hop] += v * v;
        }
        let (lo, hi) = min_max(&sum);
        if hi - lo > 1e-9 * hi.abs().max(1e-300) {
            return Err(Error::config(format!(
                "{:?} window of {win} samples violates constant overlap-add at hop {hop} \
                 (overlap sum spans {lo}..{hi})",
                self.window
            )));
        }
        let (lo_sq, _) = min_max(&sum_sq);
        if lo_sq < MIN_DENOMINATOR {
            return Err(Error::config(format!(
                "overlap-add normalization {lo_sq:e} vanishes at hop {hop}"
            )));
        }
        Ok(())
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// One-sided complex spectrogram, `values` shaped `[frames, bins]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: ComplexTensor,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Planned STFT/ISTFT for one configuration.
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Arc<Vec<f64>>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: &StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self {
            window: Arc::new(config.window.values(config.win_samples)),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Spectrum of one window-length frame, written into `re`/`im`
    /// (each `bins` long).
    pub fn analyze_frame(&self, frame: &[f64], re: &mut [f64], im: &mut [f64]) {
        let n = self.config.fft_size;
        let mut buf = vec![0.0; n];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(self.window.iter()) {
            *b = x * w;
        }
        let mut spec = self.forward.make_output_vec();
        self.forward
            .process(&mut buf, &mut spec)
            .expect("buffer sizes match the plan");
        for (k, c) in spec.iter().enumerate() {
            re[k] = c.re;
            im[k] = c.im;
        }
    }

    /// Analysis of a sample slice into a `[frames, bins]` complex tensor.
    pub fn analyze(&self, samples: &[f64]) -> Result<ComplexTensor> {
        let frames = self.config.num_frames(samples.len()).ok_or_else(|| {
            Error::Audio(format!(
                "signal of {} samples shorter than the {}-sample window",
                samples.len(),
                self.config.win_samples
            ))
        })?;
        let (hop, win, bins) = (
            self.config.hop_samples,
            self.config.win_samples,
            self.config.bins(),
        );
        let mut re = vec![0.0; frames * bins];
        let mut im = vec![0.0; frames * bins];
        for t in 0..frames {
            self.analyze_frame(
                &samples[t * hop..t * hop + win],
                &mut re[t * bins..(t + 1) * bins],
                &mut im[t * bins..(t + 1) * bins],
            );
        }
        ComplexTensor::new(
            Tensor::new(&[frames, bins], re)?,
            Tensor::new(&[frames, bins], im)?,
        )
    }

    /// Inverse FFT of one frame multiplied by the synthesis window; the
    /// result is `win` samples to be overlap-added.
    pub fn synthesize_frame(&self, re: &[f64], im: &[f64]) -> Vec<f64> {
        let n = self.config.fft_size;
        let bins = self.config.bins();
        let mut spec: Vec<Complex<f64>> =
            (0..bins).map(|k| Complex::new(re[k], im[k])).collect();
        spec[0].im = 0.0;
        spec[bins - 1].im = 0.0;
        let mut out = self.inverse.make_output_vec();
        self.inverse
            .process(&mut spec, &mut out)
            .expect("buffer sizes match the plan");
        let scale = 1.0 / n as f64;
        out.truncate(self.config.win_samples);
        for (o, &w) in out.iter_mut().zip(self.window.iter()) {
            *o *= w * scale;
        }
        out
    }

    /// Summed squared synthesis window at each output sample.
    pub fn denominators(&self, frames: usize) -> Vec<f64> {
        let hop = self.config.hop_samples;
        let mut d = vec![0.0; self.config.output_len(frames)];
        for t in 0..frames {
            for (m, &w) in self.window.iter().enumerate() {
                d[t * hop + m] += w * w;
            }
        }
        d
    }

    /// Reciprocal denominators; uncovered samples (only possible at the
    /// outer edges of a valid configuration) map to zero.
    fn inverse_denominators(&self, frames: usize) -> Vec<f64> {
        self.denominators(frames)
            .into_iter()
            .map(|d| if d < MIN_DENOMINATOR { 0.0 } else { 1.0 / d })
            .collect()
    }

    /// Weighted overlap-add of a `[frames, bins]` spectrogram.
    pub fn overlap_add(&self, spec: &ComplexTensor) -> Result<Vec<f64>> {
        let bins = self.config.bins();
        if spec.shape().len() != 2 || spec.shape()[1] != bins {
            return Err(Error::shape(format!(
                "spectrogram {:?} does not have {bins} bins",
                spec.shape()
            )));
        }
        let frames = spec.shape()[0];
        let hop = self.config.hop_samples;
        let mut out = vec![0.0; self.config.output_len(frames)];
        for t in 0..frames {
            let f = self.synthesize_frame(
                &spec.re.data()[t * bins..(t + 1) * bins],
                &spec.im.data()[t * bins..(t + 1) * bins],
            );
            for (o, v) in out[t * hop..].iter_mut().zip(f) {
                *o += v;
            }
        }
        for (o, inv) in out.iter_mut().zip(self.inverse_denominators(frames)) {
            *o *= inv;
        }
        Ok(out)
    }

    pub fn stft(&self, audio: &AudioBuffer) -> Result<ComplexSpectrogram> {
        Ok(ComplexSpectrogram {
            values: self.analyze(&audio.samples)?,
            config: self.config.clone(),
            sample_rate: audio.sample_rate,
        })
    }

    pub fn istft(&self, spec: &ComplexSpectrogram) -> Result<AudioBuffer> {
        if spec.config != self.config {
            return Err(Error::config("spectrogram built with a different stft config"));
        }
        AudioBuffer::new(self.overlap_add(&spec.values)?, spec.sample_rate)
    }

    /// Differentiable overlap-add synthesis of a `[batch, frames, bins]`
    /// spectrogram into `[batch, samples]`.
    pub fn istft_var<'t>(&self, spec: CVar<'t>) -> Result<Var<'t>> {
        let shape = spec.shape();
        let bins = self.config.bins();
        if shape.len() != 3 || shape[2] != bins {
            return Err(Error::shape(format!(
                "istft expects [batch, frames, {bins}], got {shape:?}"
            )));
        }
        let (batch, frames) = (shape[0], shape[1]);
        let len = self.config.output_len(frames);
        let (re, im) = (spec.re.value(), spec.im.value());
        let mut out = Vec::with_capacity(batch * len);
        for b in 0..batch {
            let one = ComplexTensor::new(
                Tensor::new(&[frames, bins], re.data()[b * frames * bins..(b + 1) * frames * bins].to_vec())?,
                Tensor::new(&[frames, bins], im.data()[b * frames * bins..(b + 1) * frames * bins].to_vec())?,
            )?;
            out.extend(self.overlap_add(&one)?);
        }
        let value = Tensor::new(&[batch, len], out)?;

        let stft = self.clone();
        let inv_den = self.inverse_denominators(frames);
        // one node carries both planes so a single backward pass produces
        // both gradients; the concat splits them again
        let joint = Var::concat(&[spec.re, spec.im], 2)?;
        Ok(spec.re.tape().push_op(value, &[joint], move |g, _| {
            let n = stft.config.fft_size;
            let (hop, win) = (stft.config.hop_samples, stft.config.win_samples);
            let mut grad = vec![0.0; batch * frames * 2 * bins];
            let mut buf = vec![0.0; n];
            let mut out = stft.forward.make_output_vec();
            for b in 0..batch {
                for t in 0..frames {
                    buf.iter_mut().for_each(|v| *v = 0.0);
                    for m in 0..win {
                        let s = t * hop + m;
                        buf[m] = g.data()[b * len + s] * stft.window[m] * inv_den[s];
                    }
                    stft.forward
                        .process(&mut buf, &mut out)
                        .expect("buffer sizes match the plan");
                    let row = &mut grad[(b * frames + t) * 2 * bins..(b * frames + t + 1) * 2 * bins];
                    for k in 0..bins {
                        let c = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 } / n as f64;
                        row[k] = c * out[k].re;
                        row[bins + k] = if k == 0 || k == bins - 1 { 0.0 } else { c * out[k].im };
                    }
                }
            }
            vec![Some(Tensor::new(&[batch, frames, 2 * bins], grad).expect("shape"))]
        }))
    }
}
