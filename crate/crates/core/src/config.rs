//! TOML run files: `[model]` (a `preset` plus overrides), optional
//! `[stft]` overrides, `[train]` and `[synth]`.

use std::path::Path;

use serde::Serialize;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synth::CorpusSpec;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: CorpusSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::wideband(),
            train: TrainConfig::default(),
            synth: CorpusSpec::default(),
        }
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn section(root: &mut Table, name: &str) -> Result<Table> {
    match root.remove(name) {
        None => Ok(Table::new()),
        Some(Value::Table(t)) => Ok(t),
        Some(_) => Err(Error::config(format!("[{name}] must be a table"))),
    }
}

fn to_table<T: Serialize>(v: &T) -> Result<Table> {
    Table::try_from(v).map_err(|e| Error::config(format!("serializing defaults: {e}")))
}

fn from_table<T: serde::de::DeserializeOwned>(t: Table, name: &str) -> Result<T> {
    Value::Table(t)
        .try_into()
        .map_err(|e| Error::config(format!("[{name}]: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut root: Table = text.parse().map_err(|e| Error::config(format!("malformed config: {e}")))?;
        let mut model_over = section(&mut root, "model")?;
        let stft_over = section(&mut root, "stft")?;
        let train = section(&mut root, "train")?;
        let synth = section(&mut root, "synth")?;
        if let Some(k) = root.keys().next() {
            return Err(Error::config(format!("unknown config key or section {k:?}")));
        }
        let preset = match model_over.remove("preset") {
            None => "wideband".to_string(),
            Some(Value::String(s)) => s,
            Some(_) => return Err(Error::config("[model] preset must be a string")),
        };
        let mut model = to_table(&ModelConfig::preset(&preset)?)?;
        merge(&mut model, model_over);
        if !stft_over.is_empty() {
            let mut wrap = Table::new();
            wrap.insert("stft".into(), Value::Table(stft_over));
            merge(&mut model, wrap);
        }
        let model: ModelConfig = from_table(model, "model")?;
        model.validate()?;
        let train: TrainConfig = from_table(train, "train")?;
        train.validate()?;
        let rate_given = synth.contains_key("sample_rate");
        let mut synth: CorpusSpec = from_table(synth, "synth")?;
        if !rate_given {
            synth.sample_rate = model.sample_rate;
        }
        synth.validate()?;
        Ok(Self { model, train, synth })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fully expanded TOML that parses back to `self`.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("serializing config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_wideband_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn preset_with_overrides() {
        let c = RunConfig::parse(
            "[model]\npreset = \"fullband\"\nchannels = 32\n[stft]\nhop_samples = 240\n[train]\nlr = 0.01\n",
        )
        .unwrap();
        assert_eq!(c.model.channels, 32);
        assert_eq!(c.model.bands, 3);
        assert_eq!(c.model.stft.hop_samples, 240);
        assert_eq!(c.model.stft.fft_size, 1920);
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.synth.sample_rate, 48_000);
    }

    #[test]
    fn expanded_form_round_trips() {
        let c = RunConfig::parse("[model]\npreset = \"wideband_lite\"\n[synth]\ncount = 7\n").unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn bad_files_are_config_errors() {
        for text in [
            "[model\n",
            "[modle]\n",
            "[model]\npreset = \"huge\"\n",
            "[model]\nchanels = 3\n",
            "[train]\nlr = -1.0\n",
            "[model]\nblocks = 7\n",
            "[synth]\ncount = 0\n",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
