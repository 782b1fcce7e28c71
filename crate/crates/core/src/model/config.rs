use serde::{Deserialize, Serialize};

use crate::dsp::{BandLayout, StftConfig};
use crate::error::{Error, Result};

/// Architecture hyperparameters. Defaults are the full wideband model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub stft: StftConfig,
    /// Overlapping frequency bands fed as input channels; 1 means no split.
    pub bands: usize,
    /// Feature maps per CR block.
    pub channels: usize,
    /// CR blocks on each side of the encoder-decoder.
    pub blocks: usize,
    pub kernel_time: usize,
    pub kernel_freq: usize,
    pub freq_stride: usize,
    /// FSMN memory orders.
    pub lookback: usize,
    pub lookahead: usize,
    /// Stacked time-axis CFSMN layers at the bottleneck.
    pub recurrent_layers: usize,
    pub leaky_slope: f64,
    /// Attention on the skip pathways.
    pub attention: bool,
    /// Frequency-axis CFSMN inside encoder blocks.
    pub cred_fsmn: bool,
    /// Frequency-axis CFSMN inside decoder blocks (only with `cred_fsmn`).
    pub decoder_fsmn: bool,
    /// Time-axis CFSMN module between encoder and decoder.
    pub recurrent: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::wideband()
    }
}

impl ModelConfig {
    pub fn wideband() -> Self {
        Self {
            sample_rate: 16_000,
            stft: StftConfig::wideband(),
            bands: 1,
            channels: 128,
            blocks: 6,
            kernel_time: 2,
            kernel_freq: 5,
            freq_stride: 2,
            lookback: 20,
            lookahead: 0,
            recurrent_layers: 2,
            leaky_slope: 0.01,
            attention: true,
            cred_fsmn: true,
            decoder_fsmn: true,
            recurrent: true,
        }
    }

    pub fn wideband_lite() -> Self {
        Self {
            channels: 64,
            ..Self::wideband()
        }
    }

    pub fn fullband() -> Self {
        Self {
            sample_rate: 48_000,
            stft: StftConfig::fullband(),
            bands: 3,
            ..Self::wideband()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "wideband" => Ok(Self::wideband()),
            "wideband_lite" | "lite" => Ok(Self::wideband_lite()),
            "fullband" => Ok(Self::fullband()),
            other => Err(Error::config(format!(
                "unknown model preset {other:?} (wideband, wideband_lite, fullband)"
            ))),
        }
    }

    /// Same layout with a different width and depth.
    pub fn resized(&self, channels: usize, blocks: usize) -> Self {
        Self {
            channels,
            blocks,
            ..self.clone()
        }
    }

    pub fn band_layout(&self) -> Result<BandLayout> {
        let bins = self.stft.bins();
        if self.bands == 1 {
            Ok(BandLayout::single(bins))
        } else {
            BandLayout::overlapping(bins, self.bands)
        }
    }

    /// Input frequency size of every encoder block followed by the
    /// bottleneck size.
    pub fn freq_chain(&self) -> Result<Vec<usize>> {
        let mut f = self.band_layout()?.width();
        let mut chain = vec![f];
        for i in 0..self.blocks {
            if f < self.kernel_freq {
                return Err(Error::config(format!(
                    "encoder block {i} gets {f} bins, fewer than the {}-bin kernel; \
                     use fewer blocks or more bins",
                    self.kernel_freq
                )));
            }
            f = (f - self.kernel_freq) / self.freq_stride + 1;
            chain.push(f);
        }
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let zero = [
            ("sample_rate", self.sample_rate as usize),
            ("bands", self.bands),
            ("channels", self.channels),
            ("blocks", self.blocks),
            ("kernel_time", self.kernel_time),
            ("kernel_freq", self.kernel_freq),
            ("freq_stride", self.freq_stride),
        ]
        .into_iter()
        .find(|(_, v)| *v == 0);
        if let Some((name, _)) = zero {
            return Err(Error::config(format!("model.{name} must be positive")));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::config("model.leaky_slope must be finite and non-negative"));
        }
        if self.recurrent && self.recurrent_layers == 0 {
            return Err(Error::config("recurrent module enabled with zero layers"));
        }
        if self.freq_stride > self.kernel_freq {
            return Err(Error::config("freq_stride larger than kernel_freq skips bins"));
        }
        self.freq_chain()?;
        Ok(())
    }

    /// Algorithmic latency of streaming inference in milliseconds.
    pub fn latency_ms(&self) -> f64 {
        1000.0 * self.stft.latency_samples() as f64 / self.sample_rate as f64
    }
}
