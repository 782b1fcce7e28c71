use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use frcrn::config::RunConfig;
use frcrn::dsp::{read_wav, write_wav, StftConfig, WavEncoding};
use frcrn::model::{Frcrn, ModelConfig};
use frcrn::synth::{make_corpus, Manifest};
use frcrn::train::{evaluate, evaluate_with, load_pairs, oracle_enhance, train, EvalReport};
use frcrn::{gradsuite, Error};

/// Streaming and batch output must agree to this.
const STREAMING_TOLERANCE: f64 = 1e-10;

#[derive(Parser)]
#[command(name = "frcrn", version, about = "Complex-mask speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a noisy/clean corpus and its manifest.
    SynthData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Validation manifest; otherwise the tail of `--data` is held out.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Start from these weights instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Enhance one WAV file or every WAV file in a directory.
    Enhance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run frame by frame and check the result against batch enhancement.
        #[arg(long)]
        streaming: bool,
    },
    /// SI-SNR of noisy and enhanced audio for every manifest pair.
    Eval {
        #[arg(long, required_unless_present = "oracle_mask")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Writes the table here and per-pair JSON lines next to it.
        #[arg(long)]
        report: PathBuf,
        /// Enhance with the ideal complex mask instead of a model.
        #[arg(long)]
        oracle_mask: bool,
        /// STFT settings for the oracle path when no model is given.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long)]
        module: Option<String>,
    },
    /// Print configuration, parameter counts, layer shapes and latency.
    Inspect {
        #[arg(long, conflicts_with_all = ["config", "preset"])]
        model: Option<PathBuf>,
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) => match e {
                Error::Config(_) => 3,
                Error::Data(_) | Error::Audio(_) | Error::Wav(_) | Error::Io(_) | Error::Checkpoint(_) => 4,
                Error::Numeric(_) => 5,
                Error::Shape(_) | Error::Axis { .. } => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load_model(path: &Path) -> CliResult<Frcrn> {
    if !path.is_file() {
        return Err(Error::Checkpoint(format!("no checkpoint at {}", path.display())).into());
    }
    Ok(Frcrn::load(path)?)
}

fn synth_data(config: &Path, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let m = make_corpus(&cfg.synth, out)?;
    println!("wrote {} pairs and {}", m.len(), out.join("manifest.tsv").display());
    Ok(())
}

fn run_train(config: &Path, data: &Path, out: &Path, val: Option<&Path>, init: Option<&Path>) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let manifest = Manifest::load(data)?;
    if manifest.is_empty() {
        return Err(Error::Data(format!("{} lists no pairs", data.display())).into());
    }
    let (train_m, val_m) = match val {
        Some(v) => (manifest, Manifest::load(v)?),
        None => manifest.split_tail(cfg.train.val_fraction),
    };
    let mut model = match init {
        Some(p) => {
            let m = load_model(p)?;
            if *m.config() != cfg.model {
                return Err(Error::Config("--init checkpoint was built with a different model config".into()).into());
            }
            m
        }
        None => Frcrn::new(cfg.model.clone(), cfg.train.seed)?,
    };
    fs::create_dir_all(out).map_err(Error::from)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?).map_err(Error::from)?;
    let summary = train(&mut model, &load_pairs(&train_m)?, &load_pairs(&val_m)?, &cfg.train, Some(out))?;
    println!(
        "{} epochs, {} steps, {:.1} s; validation SI-SNR {} -> {} dB{}",
        summary.epochs.len(),
        summary.steps,
        summary.wall_time_s,
        fmt_opt(summary.baseline_val_si_snr),
        fmt_opt(summary.best_val_si_snr),
        if summary.stopped_early { " (early stop)" } else { "" }
    );
    println!("best weights: {}", out.join("best.ckpt").display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.2}"))
}

fn wav_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn enhance_one(model: &Frcrn, input: &Path, out: &Path, streaming: bool) -> CliResult<()> {
    let audio = read_wav(input)?;
    let batch = model.enhance(&audio)?;
    let result = if streaming {
        let s = model.streaming_enhance(&audio)?;
        let diff = s
            .samples
            .iter()
            .zip(&batch.samples)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if !(diff < STREAMING_TOLERANCE) {
            return Err(Error::Numeric(format!(
                "{}: streaming differs from batch by {diff:e}",
                input.display()
            ))
            .into());
        }
        println!("{}: streaming max |diff| {diff:.3e}", input.display());
        s
    } else {
        batch
    };
    write_wav(out, &result, WavEncoding::Float32)?;
    Ok(())
}

fn run_enhance(model: &Path, input: &Path, out: &Path, streaming: bool) -> CliResult<()> {
    let mut model = load_model(model)?;
    model.mode = frcrn::layers::Mode::Eval;
    if input.is_dir() {
        fs::create_dir_all(out).map_err(Error::from)?;
        let files = wav_files(input)?;
        if files.is_empty() {
            return Err(Error::Data(format!("no .wav files in {}", input.display())).into());
        }
        for f in &files {
            enhance_one(&model, f, &out.join(f.file_name().expect("listed file")), streaming)?;
        }
        println!("enhanced {} files into {}", files.len(), out.display());
    } else {
        if !input.is_file() {
            return Err(Error::Data(format!("no such input {}", input.display())).into());
        }
        enhance_one(&model, input, out, streaming)?;
    }
    Ok(())
}

fn write_report(report: &EvalReport, path: &Path) -> CliResult<()> {
    let table = report.to_table();
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d).map_err(Error::from)?;
    }
    fs::write(path, &table).map_err(Error::from)?;
    fs::write(path.with_extension("jsonl"), report.to_jsonl()).map_err(Error::from)?;
    print!("{table}");
    Ok(())
}

fn run_eval(
    model: Option<&Path>,
    data: &Path,
    report: &Path,
    oracle: bool,
    config: Option<&Path>,
) -> CliResult<()> {
    let manifest = Manifest::load(data)?;
    let model = model.map(load_model).transpose()?;
    let r = if oracle {
        let stft: StftConfig = match (&model, config) {
            (Some(m), _) => m.config().stft.clone(),
            (None, Some(c)) => RunConfig::load(c)?.model.stft,
            (None, None) => ModelConfig::wideband().stft,
        };
        evaluate_with(&manifest, &stft, |c, n| oracle_enhance(&stft, c, n))?
    } else {
        let m = model.ok_or_else(|| CliError::Usage("--model is required without --oracle-mask".into()))?;
        evaluate(&m, &manifest)?
    };
    write_report(&r, report)
}

fn run_gradcheck(module: Option<&str>) -> CliResult<()> {
    let modules: Vec<&str> = match module {
        Some(m) => vec![m],
        None => gradsuite::MODULES.to_vec(),
    };
    let mut failed = Vec::new();
    for m in modules {
        let r = gradsuite::run(m)?;
        println!(
            "{:<12} {}  max rel err {:.3e} over {} elements",
            m,
            if r.passed { "PASS" } else { "FAIL" },
            r.max_rel_error,
            r.checked
        );
        if !r.passed {
            failed.push(m);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))).into())
    }
}

/// Reference parameter count for a stock preset, if `c` is one.
fn reference_size(c: &ModelConfig) -> Option<(&'static str, f64)> {
    let wide = ModelConfig::wideband();
    if *c == wide {
        Some(("wideband", 6.9e6))
    } else if *c == ModelConfig::wideband_lite() {
        Some(("wideband_lite", 2.1e6))
    } else {
        None
    }
}

fn run_inspect(model: Option<&Path>, config: Option<&Path>, preset: Option<&str>) -> CliResult<()> {
    let model = match (model, config, preset) {
        (Some(p), _, _) => load_model(p)?,
        (None, Some(c), _) => Frcrn::new(RunConfig::load(c)?.model, 0)?,
        (None, None, Some(p)) => Frcrn::new(ModelConfig::preset(p)?, 0)?,
        (None, None, None) => Frcrn::new(ModelConfig::wideband(), 0)?,
    };
    let c = model.config();
    let toml = toml::to_string(c).map_err(|e| Error::Config(e.to_string()))?;
    println!("[model]\n{toml}");
    let b = model.param_breakdown();
    let total = model.param_count();
    println!("parameters        {total:>10}  ({:.3} M)", total as f64 / 1e6);
    for (name, n) in [
        ("encoder", b.encoder),
        ("recurrent", b.recurrent),
        ("attention", b.attention),
        ("decoder", b.decoder),
        ("head", b.head),
    ] {
        println!("  {name:<15} {n:>10}");
    }
    if let Some((name, reference)) = reference_size(c) {
        let dev = 100.0 * (total as f64 - reference) / reference;
        println!("reference {name:<7} {:>10.3} M  deviation {dev:+.1} %", reference / 1e6);
        println!(
            "  skip attention is a light channel and spatial gate: {} parameters",
            b.attention
        );
        println!(
            "  skips are concatenated, doubling decoder input channels: {} of the decoder parameters",
            b.skip_concat
        );
    }
    println!("\n{:<10} {:>8} {:>8}", "layer", "channels", "freq");
    for s in model.layer_shapes() {
        println!("{:<10} {:>8} {:>8}", s.name, s.channels, s.freq);
    }
    println!("\nalgorithmic latency {:.1} ms", c.latency_ms());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SynthData { config, out } => synth_data(&config, &out),
        Command::Train {
            config,
            data,
            out,
            val,
            init,
        } => run_train(&config, &data, &out, val.as_deref(), init.as_deref()),
        Command::Enhance {
            model,
            input,
            out,
            streaming,
        } => run_enhance(&model, &input, &out, streaming),
        Command::Eval {
            model,
            data,
            report,
            oracle_mask,
            config,
        } => run_eval(model.as_deref(), &data, &report, oracle_mask, config.as_deref()),
        Command::Gradcheck { module } => run_gradcheck(module.as_deref()),
        Command::Inspect { model, config, preset } => run_inspect(model.as_deref(), config.as_deref(), preset.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Usage("x".into()).exit_code(),
            CliError::Lib(Error::Config("x".into())).exit_code(),
            CliError::Lib(Error::Data("x".into())).exit_code(),
            CliError::Lib(Error::Numeric("x".into())).exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4, 5]);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
