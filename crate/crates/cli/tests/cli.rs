use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use frcrn::model::{Frcrn, ModelConfig};

fn frcrn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frcrn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "[model]\npreset = \"wideband\"\nchannels = 4\nblocks = 2\nlookback = 3\n\
[train]\nbatch_size = 1\nmax_epochs = 1\nmax_steps = 2\ncrop_s = 0.5\nval_fraction = 0.5\n\
[synth]\ncount = 4\nsegment_s = 1.0\nreverb_fraction = 0.0\nseed = 3\n";

#[test]
fn inspect_reports_latency_sizes_and_chain() {
    let o = frcrn(&["inspect", "--preset", "wideband"]);
    assert!(o.status.success(), "{o:?}");
    let s = stdout(&o);
    assert!(s.contains("algorithmic latency 30.0 ms"), "{s}");
    assert!(s.contains("reference wideband"), "{s}");
    assert!(s.contains("light channel and spatial gate"), "{s}");
    assert!(s.contains("skips are concatenated"), "{s}");
    for f in ["159", "78", "37", "17", "7", "2"] {
        assert!(s.lines().any(|l| l.starts_with("enc") && l.trim_end().ends_with(f)), "{f} missing\n{s}");
    }
}

#[test]
fn synth_oracle_eval_reaches_the_clip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("data");
    let o = frcrn(&["synth-data", "--config", p(&cfg), "--out", p(&data)]);
    assert!(o.status.success(), "{o:?}");
    let report = dir.path().join("oracle.txt");
    let o = frcrn(&[
        "eval",
        "--oracle-mask",
        "--data",
        p(&data.join("manifest.tsv")),
        "--report",
        p(&report),
    ]);
    assert!(o.status.success(), "{o:?}");
    let table = fs::read_to_string(&report).unwrap();
    let mean: Vec<f64> = table
        .lines()
        .find(|l| l.trim_start().starts_with("mean"))
        .unwrap()
        .split_whitespace()
        .skip(1)
        .map(|x| x.parse().unwrap())
        .collect();
    assert!(mean[1] > 90.0, "{table}");
    assert_eq!(fs::read_to_string(report.with_extension("jsonl")).unwrap().lines().count(), 4);
}

#[test]
fn train_then_enhance_streaming() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("data");
    assert!(frcrn(&["synth-data", "--config", p(&cfg), "--out", p(&data)]).status.success());
    let run = dir.path().join("run");
    let o = frcrn(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data.join("manifest.tsv")),
        "--out",
        p(&run),
    ]);
    assert!(o.status.success(), "{o:?}");
    for f in ["best.ckpt", "last.ckpt", "train_log.jsonl", "config.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let noisy = data.join("noisy");
    let enhanced = dir.path().join("enhanced");
    let o = frcrn(&[
        "enhance",
        "--model",
        p(&run.join("best.ckpt")),
        "--in",
        p(&noisy),
        "--out",
        p(&enhanced),
        "--streaming",
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("streaming max |diff|"));
}

#[test]
fn enhance_preserves_length_and_rate() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let mut c = ModelConfig::wideband().resized(4, 2);
    c.lookback = 3;
    Frcrn::new(c, 1).unwrap().save(&ckpt).unwrap();
    let wav = dir.path().join("in.wav");
    let samples: Vec<f64> = (0..12_345).map(|i| 0.3 * (i as f64 * 0.05).sin()).collect();
    let audio = frcrn::dsp::AudioBuffer::new(samples, 16_000).unwrap();
    frcrn::dsp::write_wav(&wav, &audio, frcrn::dsp::WavEncoding::Pcm16).unwrap();
    let out = dir.path().join("out.wav");
    let o = frcrn(&["enhance", "--model", p(&ckpt), "--in", p(&wav), "--out", p(&out), "--streaming"]);
    assert!(o.status.success(), "{o:?}");
    let y = frcrn::dsp::read_wav(&out).unwrap();
    assert_eq!((y.len(), y.sample_rate), (12_345, 16_000));
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| frcrn(args).status.code().unwrap();
    assert_eq!(code(&["inspect", "--bogus"]), 2);
    assert_eq!(code(&["eval", "--data", "x", "--report", "y"]), 2);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nchannels = 0\n").unwrap();
    assert_eq!(code(&["inspect", "--config", p(&bad)]), 3);
    assert_eq!(code(&["inspect", "--preset", "huge"]), 3);
    assert_eq!(code(&["gradcheck", "--module", "lstm"]), 3);
    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(code(&["inspect", "--model", p(&junk)]), 4);
    assert_eq!(code(&["inspect", "--model", p(&dir.path().join("missing.ckpt"))]), 4);
}
