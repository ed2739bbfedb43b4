mod selfcheck;
mod wav;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fsb_core::train::{overfit_toy_with, synthetic_clip};
use fsb_core::{init_random, ComplexityReport, Enhancer, ModelConfig, Network, WeightStore};

#[derive(Parser)]
#[command(name = "fsb", version, about = "Low-latency multi-microphone speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance a multi-channel WAV file through the streaming path.
    Enhance {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Samples handed to the enhancer per call, in milliseconds (default: one hop).
        #[arg(long)]
        chunk_ms: Option<f64>,
    },
    /// Print parameter, MAC and buffer accounting for a configuration.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        /// Hop size in milliseconds; the output window follows as two hops.
        #[arg(long)]
        hop_ms: Option<f64>,
    },
    /// Run built-in invariant checks.
    Selfcheck {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write seeded random weights.
    InitWeights {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Overfit the small model on one synthetic clip and write the loss trace.
    TrainToy {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Mixture signal-to-noise ratio in dB.
        #[arg(long, default_value_t = 0.0)]
        snr_db: f64,
    },
}

#[derive(clap::Args)]
#[group(required = false, multiple = false)]
struct ModelArgs {
    /// JSON file with the model configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named configuration, e.g. fsb-6ch, fb6-6ch, fb9-6ch, fsb-2ch, fsb-1ch.
    #[arg(long)]
    preset: Option<String>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Ok(ModelConfig::from_json(&text)?)
            }
            (None, Some(name)) => Ok(ModelConfig::preset(name)?),
            (None, None) => Ok(ModelConfig::default()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Stft,
    Grad,
    Stream,
    Deconv,
    All,
}

/// Marks a failed invariant so `main` can pick exit code 3.
#[derive(Debug)]
struct InvariantFailed(String);

impl std::fmt::Display for InvariantFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invariant failed: {}", self.0)
    }
}

impl std::error::Error for InvariantFailed {}

fn enhance(weights: PathBuf, input: PathBuf, output: PathBuf, chunk_ms: Option<f64>) -> Result<()> {
    let store = WeightStore::load(&weights).with_context(|| format!("loading {}", weights.display()))?;
    let cfg = store.config;
    let audio = wav::read(&input)?;
    if audio.spec.sample_rate != cfg.stft.sample_rate {
        bail!("sample rate {} Hz does not match the model's {} Hz", audio.spec.sample_rate, cfg.stft.sample_rate);
    }
    if audio.channels.len() != cfg.mics {
        bail!("{} channels in input, model expects {}", audio.channels.len(), cfg.mics);
    }
    let hs = cfg.stft.hs;
    let chunk = match chunk_ms {
        Some(ms) if ms > 0.0 => ((ms * cfg.stft.sample_rate as f64 / 1000.0).round() as usize).max(1),
        Some(_) => bail!("--chunk-ms must be positive"),
        None => hs,
    };
    let net = Network::new(cfg, store.weights)?;
    let mut enh = Enhancer::new(&net)?;
    let len = audio.channels[0].len();
    let mut out = Vec::with_capacity(len);
    let mut per_frame = Vec::new();
    let started = Instant::now();
    for start in (0..len).step_by(chunk) {
        let end = (start + chunk).min(len);
        let block: Vec<&[f32]> = audio.channels.iter().map(|c| &c[start..end]).collect();
        let t0 = Instant::now();
        let got = enh.process(&block)?;
        let frames = got.len() / hs;
        if frames > 0 {
            per_frame.push(t0.elapsed() / frames as u32);
        }
        out.extend(got);
    }
    out.extend(enh.finish()?);
    let elapsed = started.elapsed();
    wav::write_mono(&output, &audio.spec, &out)?;

    let audio_secs = len as f64 / cfg.stft.sample_rate as f64;
    let rtf = elapsed.as_secs_f64() / audio_secs.max(f64::MIN_POSITIVE);
    per_frame.sort();
    let pick =
        |q: f64| per_frame.get(((per_frame.len() as f64 - 1.0) * q).round() as usize).copied().unwrap_or_default();
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    println!("wrote {} ({} samples, {:.2} s)", output.display(), out.len(), audio_secs);
    println!(
        "real-time factor {rtf:.3}; per-frame compute median {:.3} ms, p99 {:.3} ms, budget {:.3} ms",
        ms(pick(0.5)),
        ms(pick(0.99)),
        1e3 / cfg.stft.frames_per_second()
    );
    println!("samples={}", out.len());
    println!("rtf={rtf:.4}");
    println!("frame_ms_median={:.4}", ms(pick(0.5)));
    println!("frame_ms_p99={:.4}", ms(pick(0.99)));
    println!("algorithmic_latency_ms={}", cfg.stft.latency_ms());
    Ok(())
}

fn analyze(model: ModelArgs, hop_ms: Option<f64>) -> Result<()> {
    let mut cfg = model.resolve()?;
    if let Some(h) = hop_ms {
        cfg = cfg.with_hop_ms(h)?;
    }
    let report = ComplexityReport::new(&cfg)?;
    println!("{report}");
    println!();
    print!("{}", report.key_values());
    Ok(())
}

type Check = fn(u64) -> Result<Vec<selfcheck::Outcome>>;

fn run_selfcheck(suite: Suite, seed: u64) -> Result<()> {
    let checks: Vec<Check> = match suite {
        Suite::Stft => vec![selfcheck::stft],
        Suite::Grad => vec![selfcheck::grad],
        Suite::Stream => vec![selfcheck::stream],
        Suite::Deconv => vec![selfcheck::deconv],
        Suite::All => vec![selfcheck::stft, selfcheck::deconv, selfcheck::stream, selfcheck::grad],
    };
    let mut failed = Vec::new();
    for run in checks {
        for o in run(seed)? {
            let verdict = if o.passed() { "PASS" } else { "FAIL" };
            println!("{verdict} {} = {:.3e} (limit {:.1e})", o.name, o.value, o.limit);
            if !o.passed() {
                failed.push(o.name);
            }
        }
    }
    if !failed.is_empty() {
        return Err(InvariantFailed(failed.join(", ")).into());
    }
    Ok(())
}

fn init_weights(model: ModelArgs, seed: u64, out: PathBuf) -> Result<()> {
    let cfg = model.resolve()?;
    let store = init_random(&cfg, seed)?;
    store.save(&out).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} ({} parameters)", out.display(), store.num_params());
    println!("params={}", store.num_params());
    Ok(())
}

fn train_toy(steps: usize, seed: u64, out: PathBuf, lr: f64, snr_db: f64) -> Result<()> {
    let cfg = ModelConfig::toy();
    let clip = synthetic_clip(&cfg, cfg.stft.sample_rate as usize, snr_db, seed);
    let run = overfit_toy_with(&cfg, &clip, steps, seed, lr, |s, l| {
        if s % 50 == 0 {
            eprintln!("step {s:>5}  loss {l:.6}");
        }
    })?;
    std::fs::write(&out, run.trace_csv()).with_context(|| format!("writing {}", out.display()))?;
    println!("loss {:.6} -> {:.6} ({:.1}% reduction)", run.initial_loss, run.final_loss, 100.0 * run.loss_reduction());
    println!(
        "SI-SDR mixture {:.2} dB, estimate {:.2} dB -> {:.2} dB",
        run.si_sdr_mixture, run.si_sdr_initial, run.si_sdr_final
    );
    println!("loss_reduction={:.4}", run.loss_reduction());
    println!("si_sdr_improvement_db={:.3}", run.si_sdr_improvement());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Enhance { weights, input, output, chunk_ms } => enhance(weights, input, output, chunk_ms),
        Command::Analyze { model, hop_ms } => analyze(model, hop_ms),
        Command::Selfcheck { suite, seed } => run_selfcheck(suite, seed),
        Command::InitWeights { model, seed, out } => init_weights(model, seed, out),
        Command::TrainToy { steps, seed, out, lr, snr_db } => train_toy(steps, seed, out, lr, snr_db),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InvariantFailed>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
