//! Deterministic noisy/clean material: speech-like signals, noise, room
//! responses, SNR-exact mixing and on-disk corpora with manifests.

mod corpus;
mod mix;
mod noise;
mod rir;
mod speech;

pub use corpus::{make_corpus, synth_pair, CorpusSpec, Manifest, ManifestEntry};
pub use mix::{measure_snr, mix_at_snr, mix_reverberant, realize, MixSpec, Mixture, ReverbSpec, PEAK_LIMIT};
pub use noise::{synth_noise, NoiseKind};
pub use rir::{convolve_truncated, synth_rir};
pub use speech::{synth_speech, SpeechParams};
