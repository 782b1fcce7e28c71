use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

/// Controls for [`synth_speech`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechParams {
    /// Utterance base pitch is drawn from this range (Hz).
    pub f0_range: (f64, f64),
    /// Active-speech RMS level is drawn from this range (dBFS).
    pub level_db: (f64, f64),
    /// Probability that a syllable is voiced rather than a fricative.
    pub voiced_prob: f64,
}

impl Default for SpeechParams {
    fn default() -> Self {
        Self {
            f0_range: (90.0, 240.0),
            level_db: (-28.0, -18.0),
            voiced_prob: 0.85,
        }
    }
}

#[derive(Clone, Debug)]
struct Syllable {
    start: usize,
    len: usize,
    voiced: bool,
    f0_scale: f64,
    formants: [(f64, f64); 3],
}

const BANDWIDTHS: [f64; 3] = [80.0, 120.0, 170.0];
const RAMP_S: f64 = 0.02;

fn timeline<R: Rng>(n: usize, sr: f64, params: &SpeechParams, rng: &mut R) -> Vec<Syllable> {
    let mut out = Vec::new();
    let mut t = rng.gen_range(0.0..0.1) * sr;
    let draw_formants = |rng: &mut R| {
        [
            rng.gen_range(300.0..850.0),
            rng.gen_range(850.0..2400.0),
            rng.gen_range(2300.0..3300.0),
        ]
    };
    let mut current = draw_formants(rng);
    while (t as usize) < n {
        let len = (rng.gen_range(0.12..0.35) * sr) as usize;
        let next = draw_formants(rng);
        let mut formants = [(0.0, 0.0); 3];
        for k in 0..3 {
            formants[k] = (current[k], next[k]);
        }
        out.push(Syllable {
            start: t as usize,
            len,
            voiced: rng.gen_bool(params.voiced_prob),
            f0_scale: rng.gen_range(0.85..1.2),
            formants,
        });
        current = next;
        let gap = if rng.gen_bool(0.15) {
            rng.gen_range(0.2..0.5)
        } else {
            rng.gen_range(0.02..0.12)
        };
        t += len as f64 + gap * sr;
    }
    out
}

/// Two-pole resonator, unit gain at its centre frequency.
#[derive(Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, sr: f64) -> f64 {
        let r = (-PI * bw / sr).exp();
        let theta = 2.0 * PI * freq / sr;
        let gain = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
        let y = gain * x + 2.0 * r * theta.cos() * self.y1 - r * r * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Speech-like test material: syllables of band-limited glottal pulse
/// trains (or fricative noise) shaped by three moving formants, with pitch
/// drift, vibrato and pauses. Deterministic in `seed`.
pub fn synth_speech(duration_s: f64, sample_rate: u32, seed: u64, params: &SpeechParams) -> Result<AudioBuffer> {
    if !(duration_s.is_finite() && duration_s > 0.0) || sample_rate == 0 {
        return Err(Error::Data(format!(
            "speech synthesis needs a positive duration and rate, got {duration_s} s at {sample_rate} Hz"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let n = (duration_s * sr).round() as usize;
    let base_f0 = rng.gen_range(params.f0_range.0..params.f0_range.1);
    let vibrato_hz = rng.gen_range(4.0..6.5);
    let max_harmonic_hz = (0.45 * sr).min(5000.0);
    let syllables = timeline(n, sr, params, &mut rng);

    let mut out = vec![0.0; n];
    let mut phase = 0.0;
    for syl in &syllables {
        let end = (syl.start + syl.len).min(n);
        if syl.start >= end {
            continue;
        }
        let mut res: [Resonator; 3] = Default::default();
        let ramp = (RAMP_S * sr).max(1.0);
        let mut prev = 0.0;
        for i in syl.start..end {
            let u = (i - syl.start) as f64 / syl.len as f64;
            let t = i as f64 / sr;
            // declination within the syllable plus vibrato
            let f0 = base_f0 * syl.f0_scale * (1.0 - 0.12 * u) * (1.0 + 0.02 * (2.0 * PI * vibrato_hz * t).sin());
            let src = if syl.voiced {
                phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
                let harmonics = (max_harmonic_hz / f0).floor().max(1.0) as usize;
                (1..=harmonics).map(|k| (k as f64 * phase).sin() / k as f64).sum::<f64>()
            } else {
                let w: f64 = rng.sample(StandardNormal);
                let hp = w - prev;
                prev = w;
                0.5 * hp
            };
            let mut y = 0.0;
            for (k, r) in res.iter_mut().enumerate() {
                let (a, b) = syl.formants[k];
                let f = a + (b - a) * u;
                let bw = if syl.voiced { BANDWIDTHS[k] } else { 4.0 * BANDWIDTHS[k] };
                y += r.step(src, f.min(0.45 * sr), bw, sr) / (k + 1) as f64;
            }
            let k = (i - syl.start) as f64;
            let left = (end - i) as f64;
            let env = (k / ramp).min(1.0).min(left / ramp);
            out[i] = y * env * env;
        }
    }

    let active: Vec<f64> = out.iter().copied().filter(|v| v.abs() > 1e-6).collect();
    if active.is_empty() {
        return Err(Error::Data(format!("{duration_s} s is too short for a syllable")));
    }
    let rms = (active.iter().map(|v| v * v).sum::<f64>() / active.len() as f64).sqrt();
    let level = 10f64.powf(rng.gen_range(params.level_db.0..params.level_db.1) / 20.0);
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = (level / rms).min(0.9 / peak);
    for v in &mut out {
        *v *= gain;
    }
    AudioBuffer::new(out, sample_rate)
}
