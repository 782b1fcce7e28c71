use serde::{Deserialize, Serialize};

use super::rir::{convolve_truncated, synth_rir};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

/// Peak of a mixture after joint normalization.
pub const PEAK_LIMIT: f64 = 0.99;

/// One noisy/clean training pair and the noise actually added.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub noisy: AudioBuffer,
    /// Dry clean target.
    pub clean: AudioBuffer,
    /// Scaled noise, `noisy - reverberant clean`.
    pub noise: AudioBuffer,
    /// Joint gain applied to avoid clipping (1 when none was needed).
    pub gain: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverbSpec {
    pub t60_s: f64,
    pub length_s: f64,
}

/// Recipe for one pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub snr_db: f64,
    pub reverb: Option<ReverbSpec>,
    pub seed: u64,
    pub segment_s: f64,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `10 log10(|clean|^2 / |noise|^2)`.
pub fn measure_snr(clean: &[f64], noise: &[f64]) -> f64 {
    10.0 * (energy(clean) / energy(noise)).log10()
}

/// Loops or crops `noise` to `len` samples.
fn fit_length(noise: &[f64], len: usize) -> Vec<f64> {
    noise.iter().copied().cycle().take(len).collect()
}

fn mix(speech: &[f64], dry: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<Mixture> {
    if !snr_db.is_finite() {
        return Err(Error::Data(format!("snr {snr_db} dB is not finite")));
    }
    if dry.sample_rate != noise.sample_rate {
        return Err(Error::Data(format!(
            "clean at {} Hz, noise at {} Hz",
            dry.sample_rate, noise.sample_rate
        )));
    }
    let es = energy(speech);
    if es == 0.0 || noise.energy() == 0.0 {
        return Err(Error::Data("cannot mix at an SNR with a silent signal".into()));
    }
    let mut z = fit_length(&noise.samples, speech.len());
    let ez = energy(&z);
    if ez == 0.0 {
        return Err(Error::Data("noise is silent over the clean length".into()));
    }
    let scale = (es / (ez * 10f64.powf(snr_db / 10.0))).sqrt();
    for v in &mut z {
        *v *= scale;
    }
    let mut noisy: Vec<f64> = speech.iter().zip(&z).map(|(s, n)| s + n).collect();
    let peak = noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut clean = dry.samples.clone();
    let gain = if peak > 1.0 { PEAK_LIMIT / peak } else { 1.0 };
    if gain != 1.0 {
        for v in noisy.iter_mut().chain(clean.iter_mut()).chain(z.iter_mut()) {
            *v *= gain;
        }
    }
    let sr = dry.sample_rate;
    Ok(Mixture {
        noisy: AudioBuffer::new(noisy, sr)?,
        clean: AudioBuffer::new(clean, sr)?,
        noise: AudioBuffer::new(z, sr)?,
        gain,
    })
}

/// Adds `noise` (looped or cropped to length) scaled so that
/// `10 log10(|clean|^2 / |noise|^2) = snr_db`. If the sum would clip, all
/// three signals are scaled together.
pub fn mix_at_snr(clean: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<Mixture> {
    mix(&clean.samples, clean, noise, snr_db)
}

/// Reverberant variant: the SNR is set against `clean * rir`, the target
/// stays dry.
pub fn mix_reverberant(clean: &AudioBuffer, rir: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<Mixture> {
    let wet = convolve_truncated(&clean.samples, &rir.samples);
    mix(&wet, clean, noise, snr_db)
}

/// Builds the pair described by `spec` from the given clean and noise
/// material.
pub fn realize(spec: &MixSpec, clean: &AudioBuffer, noise: &AudioBuffer) -> Result<Mixture> {
    match spec.reverb {
        None => mix_at_snr(clean, noise, spec.snr_db),
        Some(r) => {
            let h = synth_rir(r.t60_s, r.length_s, clean.sample_rate, spec.seed ^ 0x5eed_0f_e1)?;
            mix_reverberant(clean, &h, noise, spec.snr_db)
        }
    }
}
