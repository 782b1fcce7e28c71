use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::speech::{synth_speech, SpeechParams};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    /// Several overlapping synthetic talkers.
    Babble,
    /// Mains hum with harmonics over a faint hiss.
    Hum,
    /// Pink noise under a slow random amplitude modulation.
    Machine,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::Brown,
        NoiseKind::Babble,
        NoiseKind::Hum,
        NoiseKind::Machine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Brown => "brown",
            NoiseKind::Babble => "babble",
            NoiseKind::Hum => "hum",
            NoiseKind::Machine => "machine",
        }
    }
}

fn gaussian<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Paul Kellet's economy pink filter.
fn pink(white: &[f64]) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    white
        .iter()
        .map(|&w| {
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

/// Noise of the given kind with unit RMS.
pub fn synth_noise(kind: NoiseKind, duration_s: f64, sample_rate: u32, seed: u64) -> Result<AudioBuffer> {
    if !(duration_s.is_finite() && duration_s > 0.0) || sample_rate == 0 {
        return Err(Error::Data(format!(
            "noise synthesis needs a positive duration and rate, got {duration_s} s at {sample_rate} Hz"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let n = (duration_s * sr).round() as usize;
    let mut x = match kind {
        NoiseKind::White => gaussian(&mut rng, n),
        NoiseKind::Pink => pink(&gaussian(&mut rng, n)),
        NoiseKind::Brown => {
            let mut acc = 0.0;
            gaussian(&mut rng, n)
                .into_iter()
                .map(|w| {
                    acc = 0.995 * acc + 0.1 * w;
                    acc
                })
                .collect()
        }
        NoiseKind::Babble => {
            let talkers = rng.gen_range(4..8);
            let mut sum = vec![0.0; n];
            for _ in 0..talkers {
                let s = synth_speech(duration_s, sample_rate, rng.gen(), &SpeechParams::default())?;
                for (o, v) in sum.iter_mut().zip(&s.samples) {
                    *o += v;
                }
            }
            sum
        }
        NoiseKind::Hum => {
            let mains = if rng.gen_bool(0.5) { 50.0 } else { 60.0 };
            let phases: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let hiss = gaussian(&mut rng, n);
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    let tone: f64 = phases
                        .iter()
                        .enumerate()
                        .map(|(k, p)| (2.0 * PI * mains * (k + 1) as f64 * t + p).sin() / (k + 1) as f64)
                        .sum();
                    tone + 0.05 * hiss[i]
                })
                .collect()
        }
        NoiseKind::Machine => {
            let rate = rng.gen_range(0.5..4.0);
            let depth = rng.gen_range(0.3..0.8);
            let phase = rng.gen_range(0.0..2.0 * PI);
            pink(&gaussian(&mut rng, n))
                .into_iter()
                .enumerate()
                .map(|(i, v)| v * (1.0 + depth * (2.0 * PI * rate * i as f64 / sr + phase).sin()))
                .collect()
        }
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms == 0.0 {
        return Err(Error::Data(format!("{} noise came out silent", kind.name())));
    }
    for v in &mut x {
        *v /= rms;
    }
    AudioBuffer::new(x, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_has_unit_rms_and_is_deterministic() {
        for kind in NoiseKind::ALL {
            let a = synth_noise(kind, 0.5, 16_000, 3).unwrap();
            assert_eq!(a.len(), 8000);
            assert!((a.energy() / 8000.0 - 1.0).abs() < 1e-9, "{kind:?}");
            assert_eq!(a, synth_noise(kind, 0.5, 16_000, 3).unwrap());
        }
    }

    #[test]
    fn pink_has_more_low_than_high_energy() {
        let a = synth_noise(NoiseKind::Pink, 1.0, 16_000, 4).unwrap();
        // first difference emphasises highs; pink loses most of its energy to it
        let diff: f64 = a.samples.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        assert!(diff < 0.5 * a.energy());
    }
}
