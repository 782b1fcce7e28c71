use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

/// `ln(1000)`: the amplitude decay rate that gives 60 dB of energy decay
/// after `T60`.
const LN_1000: f64 = 6.907755278982137;

/// Synthetic room response: unit direct path at `t = 0` followed by a
/// Gaussian tail with amplitude envelope `exp(-6.9 t / T60)` (energy
/// `exp(-13.8 t / T60)`). The tail is scaled to the energy of the direct
/// path. `decay_t60_s == 0` yields a pure impulse.
pub fn synth_rir(decay_t60_s: f64, length_s: f64, sample_rate: u32, seed: u64) -> Result<AudioBuffer> {
    if !(decay_t60_s.is_finite() && decay_t60_s >= 0.0 && length_s.is_finite() && length_s > 0.0) {
        return Err(Error::Data(format!(
            "rir needs T60 >= 0 and a positive length, got {decay_t60_s} s / {length_s} s"
        )));
    }
    let sr = sample_rate as f64;
    let n = ((length_s * sr).round() as usize).max(1);
    let mut h = vec![0.0; n];
    h[0] = 1.0;
    if decay_t60_s > 0.0 && n > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, v) in h.iter_mut().enumerate().skip(1) {
            let g: f64 = rng.sample(StandardNormal);
            *v = g * (-LN_1000 * i as f64 / (sr * decay_t60_s)).exp();
        }
        let tail: f64 = h[1..].iter().map(|v| v * v).sum();
        if tail > 0.0 {
            let s = tail.sqrt().recip();
            for v in &mut h[1..] {
                *v *= s;
            }
        }
    }
    AudioBuffer::new(h, sample_rate)
}

/// Linear convolution truncated to the length of `x`.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (i, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (o, &hv) in out[i..].iter_mut().zip(h) {
            *o += xv * hv;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_decay_single_sample_is_identity() {
        let h = synth_rir(0.0, 1.0 / 16_000.0, 16_000, 1).unwrap();
        assert_eq!(h.samples, vec![1.0]);
        let x = vec![0.3, -0.2, 0.9];
        assert_eq!(convolve_truncated(&x, &h.samples), x);
    }

    #[test]
    fn same_seed_same_response() {
        let a = synth_rir(0.4, 0.5, 16_000, 9).unwrap();
        assert_eq!(a, synth_rir(0.4, 0.5, 16_000, 9).unwrap());
        assert_eq!(a.samples[0], 1.0);
    }

    /// The least-squares decay line through 10 ms log-energy frames of the
    /// tail stays within 1 dB of `-60 t / T60` over `[0, T60]`.
    #[test]
    fn energy_envelope_regression() {
        for (t60, seed) in [(0.3, 1), (0.6, 2), (1.0, 3)] {
            let sr = 16_000;
            let h = synth_rir(t60, t60 * 1.2, sr, seed).unwrap();
            let frame = 160;
            let (mut ts, mut ds) = (Vec::new(), Vec::new());
            let frames = (t60 * sr as f64) as usize / frame;
            for k in 0..frames {
                let s = 1 + k * frame;
                let e: f64 = h.samples[s..s + frame].iter().map(|v| v * v).sum();
                ts.push((s as f64 + frame as f64 / 2.0) / sr as f64);
                ds.push(10.0 * e.log10());
            }
            let n = ts.len() as f64;
            let (mt, md) = (ts.iter().sum::<f64>() / n, ds.iter().sum::<f64>() / n);
            let slope = ts.iter().zip(&ds).map(|(t, d)| (t - mt) * (d - md)).sum::<f64>()
                / ts.iter().map(|t| (t - mt).powi(2)).sum::<f64>();
            for t in [0.0, t60 / 2.0, t60] {
                let fitted = slope * t;
                let want = -60.0 * t / t60;
                assert!((fitted - want).abs() < 1.0, "T60 {t60}: {fitted} vs {want} at {t}");
            }
        }
    }
}
