use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::dsp::{AudioBuffer, BandLayout, ComplexSpectrogram, Stft};
use crate::error::{Error, Result};
use crate::layers::{
    split_leaky_relu, CcbamLite, Cfsmn, ComplexBatchNorm, ComplexConv2d, ComplexDeconv, Ctx, Mode, StreamState,
};
use crate::params::{BufferId, ParameterStore};
use crate::tensor::{CVar, ComplexTensor, Container, DType, Tape, Tensor, Var};

/// Head bias that drives `tanh` to exactly 1 in double precision.
const SATURATED: f64 = 40.0;
/// Frames per inference pass; longer inputs run in chunks with carried
/// layer state so memory stays bounded.
pub const INFER_CHUNK: usize = 64;

#[derive(Clone, Debug)]
struct EncoderBlock {
    conv: ComplexConv2d,
    bn: ComplexBatchNorm,
    fsmn: Option<Cfsmn>,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    deconv: ComplexDeconv,
    bn: ComplexBatchNorm,
    fsmn: Option<Cfsmn>,
}

/// Bounded complex ratio mask, `[batch, bands, frames, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskEstimate {
    pub values: ComplexTensor,
}

impl MaskEstimate {
    /// Largest absolute real or imaginary part.
    pub fn max_part_abs(&self) -> f64 {
        self.values.max_part_abs()
    }
}

/// Differentiable outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward<'t> {
    /// Band-split input, `[batch, bands, frames, width]`.
    pub input: CVar<'t>,
    /// `tanh`-bounded mask, same shape as `input`.
    pub mask: CVar<'t>,
    /// Merged enhanced spectrogram, `[batch, frames, bins]`.
    pub enhanced: CVar<'t>,
}

/// Feature map size after a named stage, per frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub channels: usize,
    pub freq: usize,
}

/// Learnable scalar counts by part of the network.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub encoder: usize,
    pub recurrent: usize,
    pub attention: usize,
    pub decoder: usize,
    pub head: usize,
    /// Decoder weights that exist only because skips are concatenated
    /// rather than added (half of every decoder kernel).
    pub skip_concat: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.encoder + self.recurrent + self.attention + self.decoder + self.head
    }
}

/// Complex convolutional recurrent encoder-decoder with frequency
/// recurrence, predicting a bounded complex ratio mask.
#[derive(Clone, Debug)]
pub struct Frcrn {
    config: ModelConfig,
    layout: BandLayout,
    chain: Vec<usize>,
    pub store: ParameterStore,
    /// Train mode uses batch statistics in every batch norm.
    pub mode: Mode,
    encoder: Vec<EncoderBlock>,
    recurrent: Vec<Cfsmn>,
    attention: Vec<Option<CcbamLite>>,
    /// Indexed by level, like `encoder`.
    decoder: Vec<DecoderBlock>,
    head: ComplexConv2d,
}

impl Frcrn {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.band_layout()?;
        let chain = config.freq_chain()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let c = config.channels;
        let kernel = (config.kernel_time, config.kernel_freq);
        let s = config.freq_stride;
        let (nl, nr) = (config.lookback, config.lookahead);

        let mut encoder = Vec::with_capacity(config.blocks);
        for l in 0..config.blocks {
            let cin = if l == 0 { config.bands } else { c };
            let name = format!("enc{l}");
            encoder.push(EncoderBlock {
                conv: ComplexConv2d::new(&mut store, &format!("{name}.conv"), cin, c, kernel, s, false, &mut rng)?,
                bn: ComplexBatchNorm::new(&mut store, &format!("{name}.bn"), c)?,
                fsmn: if config.cred_fsmn {
                    Some(Cfsmn::new(&mut store, &format!("{name}.fsmn"), c, c, nl, nr, &mut rng)?)
                } else {
                    None
                },
            });
        }

        let mut recurrent = Vec::new();
        if config.recurrent {
            let h = chain[config.blocks] * c;
            for i in 0..config.recurrent_layers {
                recurrent.push(Cfsmn::new(&mut store, &format!("rec{i}"), h, h, nl, nr, &mut rng)?);
            }
        }

        let mut attention = Vec::with_capacity(config.blocks);
        for l in 0..config.blocks {
            attention.push(if config.attention {
                Some(CcbamLite::new(&mut store, &format!("skip{l}"), c, &mut rng)?)
            } else {
                None
            });
        }

        let mut decoder = Vec::with_capacity(config.blocks);
        for l in (0..config.blocks).rev() {
            let name = format!("dec{l}");
            decoder.push(DecoderBlock {
                deconv: ComplexDeconv::new(&mut store, &format!("{name}.deconv"), 2 * c, c, kernel, s, false, &mut rng)?,
                bn: ComplexBatchNorm::new(&mut store, &format!("{name}.bn"), c)?,
                fsmn: if config.cred_fsmn && config.decoder_fsmn {
                    Some(Cfsmn::new(&mut store, &format!("{name}.fsmn"), c, c, nl, nr, &mut rng)?)
                } else {
                    None
                },
            });
        }
        decoder.reverse();

        let head = ComplexConv2d::new(&mut store, "head", c, config.bands, (1, 1), 1, true, &mut rng)?;

        Ok(Self {
            config,
            layout,
            chain,
            store,
            mode: Mode::Eval,
            encoder,
            recurrent,
            attention,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &BandLayout {
        &self.layout
    }

    /// Encoder input sizes followed by the bottleneck size.
    pub fn freq_chain(&self) -> &[usize] {
        &self.chain
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn param_breakdown(&self) -> ParamBreakdown {
        let mut b = ParamBreakdown::default();
        for id in self.store.param_ids() {
            let name = self.store.param_name(id);
            let n = self.store.param(id).numel();
            let slot = if name.starts_with("enc") {
                &mut b.encoder
            } else if name.starts_with("rec") {
                &mut b.recurrent
            } else if name.starts_with("skip") {
                &mut b.attention
            } else if name.starts_with("dec") {
                if name.contains(".deconv.w_") {
                    b.skip_concat += n / 2;
                }
                &mut b.decoder
            } else {
                &mut b.head
            };
            *slot += n;
        }
        b
    }

    /// Per-stage output sizes, from input to mask.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let c = self.config.channels;
        let n = self.config.blocks;
        let mut out = vec![LayerShape {
            name: "input".into(),
            channels: self.config.bands,
            freq: self.chain[0],
        }];
        for l in 0..n {
            out.push(LayerShape {
                name: format!("enc{l}"),
                channels: c,
                freq: self.chain[l + 1],
            });
        }
        for i in 0..self.recurrent.len() {
            out.push(LayerShape {
                name: format!("rec{i} (sequence dim {})", self.chain[n] * c),
                channels: c,
                freq: self.chain[n],
            });
        }
        for l in (0..n).rev() {
            out.push(LayerShape {
                name: format!("dec{l} (input {} channels)", 2 * c),
                channels: c,
                freq: self.chain[l],
            });
        }
        out.push(LayerShape {
            name: "mask".into(),
            channels: self.config.bands,
            freq: self.chain[0],
        });
        out
    }

    /// A forward context over registered parameters in the model's mode.
    pub fn ctx<'t, 'a>(&'a self, tape: &'t Tape, params: &'a [Var<'t>]) -> Ctx<'t, 'a> {
        Ctx::new(tape, params, &self.store, self.mode)
    }

    fn freq_cfsmn<'t>(ctx: &mut Ctx<'t, '_>, fsmn: &Cfsmn, x: CVar<'t>) -> Result<CVar<'t>> {
        let s = x.shape();
        let (b, c, t, f) = (s[0], s[1], s[2], s[3]);
        let seq = x.map_parts(|v| v.permute(&[0, 2, 3, 1])?.reshape(&[b * t, f, c]))?;
        let y = fsmn.forward(ctx, seq, false)?;
        y.map_parts(|v| v.reshape(&[b, t, f, c])?.permute(&[0, 3, 1, 2]))
    }

    fn recurrent_module<'t>(&self, ctx: &mut Ctx<'t, '_>, x: CVar<'t>) -> Result<CVar<'t>> {
        if self.recurrent.is_empty() {
            return Ok(x);
        }
        let s = x.shape();
        let (b, c, t, f) = (s[0], s[1], s[2], s[3]);
        let mut h = x.map_parts(|v| v.permute(&[0, 2, 3, 1])?.reshape(&[b, t, f * c]))?;
        for layer in &self.recurrent {
            h = layer.forward(ctx, h, true)?;
        }
        h.map_parts(|v| v.reshape(&[b, t, f, c])?.permute(&[0, 3, 1, 2]))
    }

    /// Mask for a band-split input `[batch, bands, frames, width]`.
    pub fn mask<'t>(&self, ctx: &mut Ctx<'t, '_>, x: CVar<'t>) -> Result<CVar<'t>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.config.bands || s[3] != self.chain[0] {
            return Err(Error::shape(format!(
                "model input {s:?} needs [batch, {}, frames, {}]",
                self.config.bands, self.chain[0]
            )));
        }
        let slope = self.config.leaky_slope;
        let mut h = x;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for blk in &self.encoder {
            h = blk.conv.forward(ctx, h)?;
            h = split_leaky_relu(blk.bn.forward(ctx, h)?, slope)?;
            if let Some(f) = &blk.fsmn {
                h = Self::freq_cfsmn(ctx, f, h)?;
            }
            skips.push(h);
        }
        h = self.recurrent_module(ctx, h)?;
        for l in (0..self.decoder.len()).rev() {
            let mut skip = skips[l];
            if let Some(att) = &self.attention[l] {
                skip = att.forward(ctx, skip)?;
            }
            let blk = &self.decoder[l];
            h = blk.deconv.forward(ctx, CVar::concat(&[h, skip], 1)?, self.chain[l])?;
            h = split_leaky_relu(blk.bn.forward(ctx, h)?, slope)?;
            if let Some(f) = &blk.fsmn {
                h = Self::freq_cfsmn(ctx, f, h)?;
            }
        }
        self.head.forward(ctx, h)?.map_parts(|v| Ok(v.tanh()))
    }

    /// Full pass on a `[batch, frames, bins]` spectrogram.
    pub fn forward_spec<'t>(&self, ctx: &mut Ctx<'t, '_>, spec: &ComplexTensor) -> Result<Forward<'t>> {
        let input = CVar::constant(ctx.tape, &self.layout.split(spec)?);
        let mask = self.mask(ctx, input)?;
        let enhanced = self.layout.merge_var(mask.cmul(input)?)?;
        Ok(Forward { input, mask, enhanced })
    }

    /// Gradient-free inference on `[batch, frames, bins]`. In eval mode long
    /// inputs are processed [`INFER_CHUNK`] frames at a time.
    pub fn infer(&self, spec: &ComplexTensor) -> Result<(MaskEstimate, ComplexTensor)> {
        let frames = spec.shape().get(1).copied().unwrap_or(0);
        let chunked = self.mode == Mode::Eval
            && frames > INFER_CHUNK
            && !(self.config.lookahead > 0 && self.config.recurrent);
        if !chunked {
            let tape = Tape::no_grad();
            let vars = self.store.register(&tape, false);
            let mut ctx = self.ctx(&tape, &vars);
            let out = self.forward_spec(&mut ctx, spec)?;
            return Ok((MaskEstimate { values: out.mask.value() }, out.enhanced.value()));
        }
        let mut state = StreamState::new();
        let mut masks = Vec::new();
        let mut outs = Vec::new();
        for start in (0..frames).step_by(INFER_CHUNK) {
            let part = spec.narrow(1, start, INFER_CHUNK.min(frames - start))?;
            let tape = Tape::no_grad();
            let vars = self.store.register(&tape, false);
            let mut ctx = self.ctx(&tape, &vars).with_stream(&mut state);
            let out = self.forward_spec(&mut ctx, &part)?;
            masks.push(out.mask.value());
            outs.push(out.enhanced.value());
        }
        let cat = |v: &[ComplexTensor], axis| ComplexTensor::concat(&v.iter().collect::<Vec<_>>(), axis);
        Ok((MaskEstimate { values: cat(&masks, 2)? }, cat(&outs, 1)?))
    }

    /// Mask and enhanced spectrogram for one utterance.
    pub fn forward(&self, x: &ComplexSpectrogram) -> Result<(MaskEstimate, ComplexSpectrogram)> {
        if x.config != self.config.stft {
            return Err(Error::config("spectrogram stft config differs from the model's"));
        }
        let (t, f) = (x.frames(), x.bins());
        let (mask, y) = self.infer(&x.values.reshape(&[1, t, f])?)?;
        Ok((
            mask,
            ComplexSpectrogram {
                values: y.reshape(&[t, f])?,
                config: x.config.clone(),
                sample_rate: x.sample_rate,
            },
        ))
    }

    fn check_audio(&self, audio: &AudioBuffer) -> Result<()> {
        if audio.sample_rate != self.config.sample_rate {
            return Err(Error::Audio(format!(
                "audio at {} Hz, model expects {} Hz",
                audio.sample_rate, self.config.sample_rate
            )));
        }
        if audio.len() < self.config.stft.win_samples {
            return Err(Error::Audio(format!(
                "{} samples is shorter than one {}-sample window",
                audio.len(),
                self.config.stft.win_samples
            )));
        }
        Ok(())
    }

    /// Whole-utterance enhancement. The output has the input's length;
    /// samples past the last full frame are zero.
    pub fn enhance(&self, audio: &AudioBuffer) -> Result<AudioBuffer> {
        self.check_audio(audio)?;
        let stft = Stft::new(&self.config.stft)?;
        let (_, y) = self.forward(&stft.stft(audio)?)?;
        let mut out = stft.istft(&y)?;
        out.samples.resize(audio.len(), 0.0);
        Ok(out)
    }

    /// Frame-by-frame enhancement through carried layer state; matches
    /// [`enhance`](Self::enhance) in eval mode.
    pub fn streaming_enhance(&self, audio: &AudioBuffer) -> Result<AudioBuffer> {
        self.check_audio(audio)?;
        let mut s = super::StreamingEnhancer::new(self)?;
        let mut out = s.push(&audio.samples)?;
        out.extend(s.finish());
        out.resize(audio.len(), 0.0);
        AudioBuffer::new(out, audio.sample_rate)
    }

    pub fn apply_bn_updates(&mut self, updates: Vec<(BufferId, Tensor)>) -> Result<()> {
        for (id, value) in updates {
            self.store.set_buffer(id, value)?;
        }
        Ok(())
    }

    /// Zeroes the head weights and saturates its bias so the mask is
    /// exactly `1 + 0j` and the model passes its input through.
    pub fn saturate_identity(&mut self) {
        for id in [self.head.w_re, self.head.w_im] {
            let shape = self.store.param(id).shape().to_vec();
            *self.store.param_mut(id) = Tensor::zeros(&shape);
        }
        let (b_re, b_im) = self.head.bias.expect("head has a bias");
        let bands = self.config.bands;
        *self.store.param_mut(b_re) = Tensor::full(&[bands], SATURATED);
        *self.store.param_mut(b_im) = Tensor::zeros(&[bands]);
    }

    pub fn to_container(&self, dtype: DType) -> Result<Container> {
        let meta = serde_json::to_string(&self.config)
            .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;
        Ok(self.store.to_container(meta, dtype))
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&c.metadata)
            .map_err(|e| Error::Checkpoint(format!("config header: {e}")))?;
        let mut model = Self::new(config, 0)?;
        model.store.load_container(c)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container(DType::F64)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{StftConfig, Window};
    use crate::layers::test_util::random_complex;

    pub(crate) fn small_config(bins: usize, channels: usize, blocks: usize) -> ModelConfig {
        let fft = 2 * (bins - 1);
        ModelConfig {
            stft: StftConfig {
                win_samples: fft,
                hop_samples: fft / 2,
                fft_size: fft,
                window: Window::Hann,
            },
            channels,
            blocks,
            lookback: 3,
            ..ModelConfig::wideband()
        }
    }

    fn randomized(config: ModelConfig, seed: u64) -> Frcrn {
        let mut m = Frcrn::new(config, seed).unwrap();
        crate::layers::test_util::randomize(&mut m.store, 0.3, seed + 1);
        m
    }

    #[test]
    fn chunked_inference_matches_one_pass() {
        let m = randomized(small_config(33, 4, 2), 21);
        let x = random_complex(&[2, 2 * INFER_CHUNK + 7, 33], 22);
        let (mask, y) = m.infer(&x).unwrap();
        let tape = Tape::no_grad();
        let vars = m.store.register(&tape, false);
        let mut ctx = m.ctx(&tape, &vars);
        let whole = m.forward_spec(&mut ctx, &x).unwrap();
        assert!(whole.enhanced.value().max_abs_diff(&y).unwrap() < 1e-10);
        assert!(whole.mask.value().max_abs_diff(&mask.values).unwrap() < 1e-10);
    }

    #[test]
    fn shape_chain_and_output_shape() {
        let m = Frcrn::new(small_config(321, 2, 6), 0).unwrap();
        assert_eq!(m.freq_chain(), &[321, 159, 78, 37, 17, 7, 2]);
        let x = random_complex(&[1, 4, 321], 1);
        let (mask, y) = m.infer(&x).unwrap();
        assert_eq!(mask.values.shape(), &[1, 1, 4, 321]);
        assert_eq!(y.shape(), &[1, 4, 321]);
    }

    #[test]
    fn identity_mask_passes_input_through() {
        for bands in [1, 3] {
            let mut cfg = small_config(97, 3, 2);
            cfg.bands = bands;
            let mut m = randomized(cfg, 2);
            m.saturate_identity();
            let x = random_complex(&[2, 3, 97], 3);
            let (mask, y) = m.infer(&x).unwrap();
            assert_eq!(y, x);
            assert!(mask.values.re.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let m = randomized(small_config(65, 3, 3), 4);
        let (_, y) = m.infer(&ComplexTensor::zeros(&[1, 5, 65])).unwrap();
        assert_eq!(y.max_part_abs(), 0.0);
    }

    #[test]
    fn ablations_build_and_run() {
        let base = small_config(65, 3, 3);
        let variants = [
            ModelConfig { cred_fsmn: false, ..base.clone() },
            ModelConfig { attention: false, ..base.clone() },
            ModelConfig { recurrent: false, ..base.clone() },
            base.clone(),
        ];
        let full = Frcrn::new(base, 0).unwrap().param_count();
        for cfg in variants {
            let m = randomized(cfg, 5);
            let (mask, _) = m.infer(&random_complex(&[1, 3, 65], 6)).unwrap();
            assert!(mask.max_part_abs() <= 1.0);
            assert!(m.param_count() <= full);
        }
    }

    #[test]
    fn breakdown_sums_to_total() {
        let m = Frcrn::new(small_config(65, 4, 3), 0).unwrap();
        let b = m.param_breakdown();
        assert_eq!(b.total(), m.param_count());
        assert!(b.skip_concat > 0 && b.skip_concat < b.decoder);
    }

    #[test]
    fn train_mode_reports_bn_updates() {
        let mut m = randomized(small_config(65, 3, 2), 7);
        m.mode = Mode::Train;
        let tape = Tape::new();
        let vars = m.store.register(&tape, true);
        let mut ctx = m.ctx(&tape, &vars);
        m.forward_spec(&mut ctx, &random_complex(&[2, 4, 65], 8)).unwrap();
        // five running statistics per batch norm, two blocks per side
        assert_eq!(ctx.bn_updates.len(), 20);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let m = randomized(small_config(65, 3, 2), 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        let back = Frcrn::load(&path).unwrap();
        assert_eq!(back.config(), m.config());
        let x = random_complex(&[1, 4, 65], 10);
        assert_eq!(back.infer(&x).unwrap(), m.infer(&x).unwrap());
    }
}
