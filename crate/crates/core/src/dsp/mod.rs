//! Audio buffers, WAV files, STFT analysis/synthesis and band splitting.

mod audio;
mod bands;
mod stft;
mod wav;

pub use audio::AudioBuffer;
pub use bands::{BandLayout, BandRange};
pub use stft::{ComplexSpectrogram, Stft, StftConfig, Window};
pub use wav::{read_wav, write_wav, WavEncoding};
