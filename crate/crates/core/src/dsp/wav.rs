use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Reads 16-bit PCM or 32-bit float WAV. Multi-channel files keep only
/// the first channel.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Audio(format!("{}: zero channels", path.display())));
    }
    if channels > 1 {
        log::warn!(
            "{}: {} channels, using the first only",
            path.display(),
            channels
        );
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Audio(format!(
                "{}: unsupported encoding {fmt:?} {bits}-bit",
                path.display()
            )))
        }
    };
    let samples = interleaved.into_iter().step_by(channels).collect();
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes a mono WAV. PCM16 clips to `[-1, 1)` and rounds.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, encoding: WavEncoding) -> Result<()> {
    let (bits, fmt) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in &audio.samples {
        match encoding {
            WavEncoding::Pcm16 => {
                w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?
            }
            WavEncoding::Float32 => w.write_sample(s as f32)?,
        }
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float32_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let samples: Vec<f64> = (0..257).map(|i| ((i as f32) * 0.013).sin() as f64).collect();
        let a = AudioBuffer::new(samples, 16000).unwrap();
        write_wav(&p, &a, WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), a);
    }

    #[test]
    fn pcm16_scale_convention() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [-32768i16, 0, 16384] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples, vec![-1.0, 0.0, 0.5]);
    }

    #[test]
    fn stereo_keeps_first_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 48000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for i in 0..4 {
            w.write_sample(i as f32 * 0.25).unwrap();
            w.write_sample(-1.0f32).unwrap();
        }
        w.finalize().unwrap();
        let a = read_wav(&p).unwrap();
        assert_eq!(a.sample_rate, 48000);
        assert_eq!(a.samples, vec![0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn unsupported_and_truncated_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Audio(_))));

        let q = dir.path().join("e.wav");
        write_wav(&q, &AudioBuffer::silence(100, 16000), WavEncoding::Float32).unwrap();
        let bytes = std::fs::read(&q).unwrap();
        std::fs::write(&q, &bytes[..bytes.len() - 7]).unwrap();
        assert!(read_wav(&q).is_err());
    }
}
