use super::Frcrn;
use crate::dsp::Stft;
use crate::error::{Error, Result};
use crate::layers::{Mode, StreamState};
use crate::tensor::{ComplexTensor, Tape, Tensor};

/// Same cut-off as the batch overlap-add.
const MIN_DENOMINATOR: f64 = 1e-8;

/// Hop-by-hop enhancement of an unbounded sample stream.
///
/// Each hop of input completes at most one analysis frame; after the frame
/// is enhanced and overlap-added, the oldest hop of output can no longer
/// change and is emitted. A sample therefore leaves at most `win + hop`
/// samples after it arrives.
pub struct StreamingEnhancer<'m> {
    model: &'m Frcrn,
    stft: Stft,
    state: StreamState,
    pending: Vec<f64>,
    acc: Vec<f64>,
    den: Vec<f64>,
    frames: usize,
}

impl<'m> StreamingEnhancer<'m> {
    pub fn new(model: &'m Frcrn) -> Result<Self> {
        if model.mode == Mode::Train {
            return Err(Error::config("streaming needs a model in eval mode"));
        }
        if model.config().lookahead > 0 && model.config().recurrent {
            return Err(Error::config(
                "time-axis look-ahead taps cannot run frame by frame",
            ));
        }
        let stft = Stft::new(&model.config().stft)?;
        let win = model.config().stft.win_samples;
        Ok(Self {
            model,
            stft,
            state: StreamState::new(),
            pending: Vec::with_capacity(win),
            acc: vec![0.0; win],
            den: vec![0.0; win],
            frames: 0,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Feeds samples and returns every output sample that became final.
    pub fn push(&mut self, samples: &[f64]) -> Result<Vec<f64>> {
        let cfg = self.model.config().stft.clone();
        let (win, hop, bins) = (cfg.win_samples, cfg.hop_samples, cfg.bins());
        let mut out = Vec::new();
        for &x in samples {
            self.pending.push(x);
            if self.pending.len() < win {
                continue;
            }
            let mut re = vec![0.0; bins];
            let mut im = vec![0.0; bins];
            self.stft.analyze_frame(&self.pending, &mut re, &mut im);
            let frame = ComplexTensor::new(Tensor::new(&[1, 1, bins], re)?, Tensor::new(&[1, 1, bins], im)?)?;

            let tape = Tape::no_grad();
            let vars = self.model.store.register(&tape, false);
            let mut ctx = self.model.ctx(&tape, &vars).with_stream(&mut self.state);
            let y = self.model.forward_spec(&mut ctx, &frame)?.enhanced.value();

            let synth = self.stft.synthesize_frame(y.re.data(), y.im.data());
            for (m, (v, w)) in synth.into_iter().zip(self.stft.window()).enumerate() {
                self.acc[m] += v;
                self.den[m] += w * w;
            }
            out.extend((0..hop).map(|m| normalize(self.acc[m], self.den[m])));
            self.acc.drain(..hop);
            self.acc.resize(win, 0.0);
            self.den.drain(..hop);
            self.den.resize(win, 0.0);
            self.pending.drain(..hop);
            self.frames += 1;
        }
        Ok(out)
    }

    /// Flushes the tail of the last frame. Input samples that never filled a
    /// frame produce no output.
    pub fn finish(self) -> Vec<f64> {
        if self.frames == 0 {
            return Vec::new();
        }
        let cfg = &self.model.config().stft;
        let tail = cfg.win_samples - cfg.hop_samples;
        (0..tail).map(|m| normalize(self.acc[m], self.den[m])).collect()
    }
}

fn normalize(sum: f64, den: f64) -> f64 {
    if den < MIN_DENOMINATOR {
        0.0
    } else {
        sum * (1.0 / den)
    }
}
