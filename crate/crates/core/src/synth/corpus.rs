use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mix::{realize, MixSpec, ReverbSpec};
use super::noise::{synth_noise, NoiseKind};
use super::speech::{synth_speech, SpeechParams};
use crate::dsp::{read_wav, write_wav, AudioBuffer, WavEncoding};
use crate::error::{Error, Result};

/// Settings for a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub count: usize,
    pub sample_rate: u32,
    pub segment_s: f64,
    pub snr_db: (f64, f64),
    /// Share of pairs whose speech is reverberated before mixing.
    pub reverb_fraction: f64,
    pub t60_s: (f64, f64),
    pub rir_length_s: f64,
    pub noise_kinds: Vec<NoiseKind>,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            count: 200,
            sample_rate: 16_000,
            segment_s: 4.0,
            snr_db: (0.0, 15.0),
            reverb_fraction: 0.3,
            t60_s: (0.2, 0.8),
            rir_length_s: 0.5,
            noise_kinds: NoiseKind::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synth: {m}")));
        if self.count == 0 {
            return bad("count must be positive");
        }
        if self.sample_rate == 0 || !(self.segment_s > 0.0) {
            return bad("sample_rate and segment_s must be positive");
        }
        if !(self.snr_db.0.is_finite() && self.snr_db.1.is_finite() && self.snr_db.0 <= self.snr_db.1) {
            return bad("snr_db must be a finite [low, high] range");
        }
        if !(0.0..=1.0).contains(&self.reverb_fraction) {
            return bad("reverb_fraction must lie in [0, 1]");
        }
        if !(self.t60_s.0 >= 0.0 && self.t60_s.0 <= self.t60_s.1 && self.rir_length_s > 0.0) {
            return bad("t60_s must be a non-negative range and rir_length_s positive");
        }
        if self.noise_kinds.is_empty() {
            return bad("noise_kinds is empty");
        }
        Ok(())
    }

    /// Per-pair recipes, drawn in order from the corpus seed.
    pub fn recipes(&self) -> Vec<(MixSpec, NoiseKind)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count)
            .map(|_| {
                let snr_db = if self.snr_db.0 == self.snr_db.1 {
                    self.snr_db.0
                } else {
                    rng.gen_range(self.snr_db.0..self.snr_db.1)
                };
                let reverb = rng.gen_bool(self.reverb_fraction);
                let t60 = if self.t60_s.0 == self.t60_s.1 {
                    self.t60_s.0
                } else {
                    rng.gen_range(self.t60_s.0..self.t60_s.1)
                };
                let kind = *self.noise_kinds.choose(&mut rng).expect("validated non-empty");
                let spec = MixSpec {
                    snr_db,
                    reverb: reverb.then_some(ReverbSpec {
                        t60_s: t60,
                        length_s: self.rir_length_s,
                    }),
                    seed: rng.gen(),
                    segment_s: self.segment_s,
                };
                (spec, kind)
            })
            .collect()
    }
}

/// One line of a manifest. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub noisy: PathBuf,
    pub snr_db: f64,
    pub reverb: bool,
    pub t60_s: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

const HEADER: &str = "# clean_path\tnoisy_path\tsnr_db\treverb\tt60_s\tseed";

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.clean.display(),
                e.noisy.display(),
                e.snr_db,
                u8::from(e.reverb),
                e.t60_s,
                e.seed
            );
        }
        s
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let err = |what: &str| Error::Data(format!("manifest line {}: {what}", i + 1));
            if f.len() != 6 {
                return Err(err(&format!("expected 6 tab-separated fields, found {}", f.len())));
            }
            let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| err(&format!("bad {what} {s:?}")));
            entries.push(ManifestEntry {
                clean: PathBuf::from(f[0]),
                noisy: PathBuf::from(f[1]),
                snr_db: num(f[2], "snr")?,
                reverb: match f[3] {
                    "0" => false,
                    "1" => true,
                    other => return Err(err(&format!("bad reverb flag {other:?}"))),
                },
                t60_s: num(f[4], "t60")?,
                seed: f[5].parse().map_err(|_| err(&format!("bad seed {:?}", f[5])))?,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Reads the `(clean, noisy)` audio of entry `i`.
    pub fn load_pair(&self, i: usize) -> Result<(AudioBuffer, AudioBuffer)> {
        let e = &self.entries[i];
        let clean = read_wav(&self.resolve(&e.clean))?;
        let noisy = read_wav(&self.resolve(&e.noisy))?;
        if clean.len() != noisy.len() || clean.sample_rate != noisy.sample_rate {
            return Err(Error::Data(format!(
                "pair {i}: clean and noisy differ in length or rate"
            )));
        }
        Ok((clean, noisy))
    }

    /// Splits off the last `fraction` of entries (at least one when the
    /// fraction is positive and more than one entry exists).
    pub fn split_tail(&self, fraction: f64) -> (Manifest, Manifest) {
        let n = self.entries.len();
        let mut k = (n as f64 * fraction).round() as usize;
        if fraction > 0.0 && n > 1 {
            k = k.clamp(1, n - 1);
        }
        let head = Manifest {
            root: self.root.clone(),
            entries: self.entries[..n - k].to_vec(),
        };
        let tail = Manifest {
            root: self.root.clone(),
            entries: self.entries[n - k..].to_vec(),
        };
        (head, tail)
    }
}

/// Synthesizes one pair of the corpus.
pub fn synth_pair(spec: &MixSpec, kind: NoiseKind, sample_rate: u32) -> Result<super::Mixture> {
    let clean = synth_speech(spec.segment_s, sample_rate, spec.seed, &SpeechParams::default())?;
    let noise = synth_noise(kind, spec.segment_s, sample_rate, spec.seed.wrapping_add(1))?;
    realize(spec, &clean, &noise)
}

/// Writes `count` float WAV pairs under `out_dir/{clean,noisy}` and the
/// manifest `out_dir/manifest.tsv`.
pub fn make_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    for sub in ["clean", "noisy"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    let mut entries = Vec::with_capacity(spec.count);
    for (i, (mix, kind)) in spec.recipes().into_iter().enumerate() {
        let m = synth_pair(&mix, kind, spec.sample_rate)?;
        let clean = PathBuf::from(format!("clean/{i:05}.wav"));
        let noisy = PathBuf::from(format!("noisy/{i:05}.wav"));
        write_wav(&out_dir.join(&clean), &m.clean, WavEncoding::Float32)?;
        write_wav(&out_dir.join(&noisy), &m.noisy, WavEncoding::Float32)?;
        entries.push(ManifestEntry {
            clean,
            noisy,
            snr_db: mix.snr_db,
            reverb: mix.reverb.is_some(),
            t60_s: mix.reverb.map_or(0.0, |r| r.t60_s),
            seed: mix.seed,
        });
        log::debug!("pair {i}: {} noise at {:.2} dB", kind.name(), mix.snr_db);
    }
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
