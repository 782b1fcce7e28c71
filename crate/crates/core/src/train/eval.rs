use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsp::{AudioBuffer, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::model::Frcrn;
use crate::objective::{cirm_target, si_snr};
use crate::synth::Manifest;
use super::trainer::Pair;

/// SI-SNR of one pair before and after enhancement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    pub noisy_si_snr: f64,
    pub enhanced_si_snr: f64,
}

impl EvalRow {
    pub fn improvement(&self) -> f64 {
        self.enhanced_si_snr - self.noisy_si_snr
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn mean_noisy(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.noisy_si_snr))
    }

    pub fn mean_enhanced(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.enhanced_si_snr))
    }

    pub fn mean_improvement(&self) -> f64 {
        mean(self.rows.iter().map(EvalRow::improvement))
    }

    /// Aligned plain-text table with a mean row.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:>6}  {:>12}  {:>12}  {:>12}\n", "pair", "noisy_dB", "enhanced_dB", "delta_dB");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>6}  {:>12.3}  {:>12.3}  {:>12.3}",
                r.index,
                r.noisy_si_snr,
                r.enhanced_si_snr,
                r.improvement()
            );
        }
        let _ = writeln!(
            s,
            "{:>6}  {:>12.3}  {:>12.3}  {:>12.3}",
            "mean",
            self.mean_noisy(),
            self.mean_enhanced(),
            self.mean_improvement()
        );
        s
    }

    /// One JSON object per pair, for plotting.
    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "pair": r.index,
                    "noisy_si_snr": r.noisy_si_snr,
                    "enhanced_si_snr": r.enhanced_si_snr,
                    "improvement": r.improvement(),
                })
                .to_string()
                    + "\n"
            })
            .collect()
    }
}

/// Scores a pair on the samples every analysis frame fully covers, where
/// analysis followed by synthesis is exact.
pub fn score_pair(
    index: usize,
    config: &StftConfig,
    clean: &AudioBuffer,
    noisy: &AudioBuffer,
    enhanced: &AudioBuffer,
) -> Result<EvalRow> {
    if clean.len() != noisy.len() || clean.len() != enhanced.len() {
        return Err(Error::Data(format!(
            "pair {index}: lengths differ (clean {}, noisy {}, enhanced {})",
            clean.len(),
            noisy.len(),
            enhanced.len()
        )));
    }
    let frames = config
        .num_frames(clean.len())
        .ok_or_else(|| Error::Data(format!("pair {index}: shorter than one window")))?;
    let r = config.interior(frames);
    Ok(EvalRow {
        index,
        noisy_si_snr: si_snr(&clean.samples[r.clone()], &noisy.samples[r.clone()])?,
        enhanced_si_snr: si_snr(&clean.samples[r.clone()], &enhanced.samples[r])?,
    })
}

/// Scores every manifest pair with an arbitrary `enhance(clean, noisy)`.
pub fn evaluate_with(
    manifest: &Manifest,
    config: &StftConfig,
    mut enhance: impl FnMut(&AudioBuffer, &AudioBuffer) -> Result<AudioBuffer>,
) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::Data("evaluation manifest is empty".into()));
    }
    let mut rows = Vec::with_capacity(manifest.len());
    for i in 0..manifest.len() {
        let (clean, noisy) = manifest.load_pair(i)?;
        let enhanced = enhance(&clean, &noisy)?;
        rows.push(score_pair(i, config, &clean, &noisy, &enhanced)?);
    }
    Ok(EvalReport { rows })
}

/// Model enhancement of every pair.
pub fn evaluate(model: &Frcrn, manifest: &Manifest) -> Result<EvalReport> {
    evaluate_with(manifest, &model.config().stft, |_, noisy| model.enhance(noisy))
}

/// Model enhancement of pairs already in memory.
pub fn evaluate_pairs(model: &Frcrn, pairs: &[Pair]) -> Result<EvalReport> {
    let rows = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| score_pair(i, &model.config().stft, &p.clean, &p.noisy, &model.enhance(&p.noisy)?))
        .collect::<Result<_>>()?;
    Ok(EvalReport { rows })
}

/// Upper bound: the noisy spectrogram times the unclamped ideal mask.
pub fn oracle_enhance(config: &StftConfig, clean: &AudioBuffer, noisy: &AudioBuffer) -> Result<AudioBuffer> {
    let stft = Stft::new(config)?;
    let x = stft.stft(noisy)?;
    let y = stft.stft(clean)?;
    let m = cirm_target(&x.values, &y.values, 1e-20, false)?;
    let mut spec = x.clone();
    spec.values = m.values.mul(&x.values)?;
    let mut out = stft.istft(&spec)?;
    out.samples.resize(noisy.len(), 0.0);
    Ok(out)
}
