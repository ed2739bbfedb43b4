use std::path::Path;
use std::process::{Command, Output};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use tempfile::TempDir;

fn fsb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsb")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn key(o: &Output, k: &str) -> String {
    stdout(o).lines().find_map(|l| l.strip_prefix(&format!("{k}=")).map(str::to_owned)).unwrap_or_default()
}

fn write_wav(path: &Path, channels: usize, rate: u32, len: usize, format: SampleFormat) {
    let bits = if format == SampleFormat::Float { 32 } else { 16 };
    let spec = WavSpec { channels: channels as u16, sample_rate: rate, bits_per_sample: bits, sample_format: format };
    let mut w = WavWriter::create(path, spec).unwrap();
    for i in 0..len {
        for c in 0..channels {
            let v = 0.3 * ((i as f32) * 0.01 * (c + 1) as f32).sin()
                + 0.05 * (((i * 7919 + c * 104_729) % 1000) as f32 / 500.0 - 1.0);
            match format {
                SampleFormat::Float => w.write_sample(v).unwrap(),
                SampleFormat::Int => w.write_sample((v * 32767.0) as i16).unwrap(),
            }
        }
    }
    w.finalize().unwrap();
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self { dir: tempfile::tempdir().unwrap() };
        let w = f.path("w.fsbw");
        assert!(fsb(&["init-weights", "--preset", "fsb-6ch", "--seed", "3", "--out", &w]).status.success());
        f
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }
}

#[test]
fn enhance_writes_mono_of_same_length() {
    let f = Fixture::new();
    write_wav(Path::new(&f.path("in.wav")), 6, 16_000, 5_000, SampleFormat::Float);
    let o = fsb(&["enhance", "--weights", &f.path("w.fsbw"), "--in", &f.path("in.wav"), "--out", &f.path("out.wav")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = WavReader::open(f.path("out.wav")).unwrap();
    assert_eq!(r.spec().channels, 1);
    assert_eq!(r.spec().sample_rate, 16_000);
    assert_eq!(r.len(), 5_000);
    assert!(key(&o, "rtf").parse::<f64>().unwrap() > 0.0);
    assert_eq!(key(&o, "algorithmic_latency_ms"), "4");
}

#[test]
fn chunk_size_does_not_change_output_bytes() {
    let f = Fixture::new();
    write_wav(Path::new(&f.path("in.wav")), 6, 16_000, 4_321, SampleFormat::Float);
    let (w, input) = (f.path("w.fsbw"), f.path("in.wav"));
    let run = |chunk: Option<&str>, out: &str| {
        let mut args = vec!["enhance", "--weights", &w, "--in", &input, "--out", out];
        if let Some(c) = chunk {
            args.extend(["--chunk-ms", c]);
        }
        assert!(fsb(&args).status.success());
        std::fs::read(out).unwrap()
    };
    let base = run(None, &f.path("a.wav"));
    for (i, c) in ["10", "37.5", "0.5", "1000"].iter().enumerate() {
        assert_eq!(run(Some(c), &f.path(&format!("b{i}.wav"))), base, "chunk {c} ms");
    }
}

#[test]
fn pcm16_in_gives_pcm16_out() {
    let f = Fixture::new();
    write_wav(Path::new(&f.path("in.wav")), 6, 16_000, 1_000, SampleFormat::Int);
    let o = fsb(&["enhance", "--weights", &f.path("w.fsbw"), "--in", &f.path("in.wav"), "--out", &f.path("out.wav")]);
    assert!(o.status.success());
    let r = WavReader::open(f.path("out.wav")).unwrap();
    assert_eq!(r.spec().bits_per_sample, 16);
    assert_eq!(r.spec().sample_format, SampleFormat::Int);
    assert_eq!(r.len(), 1_000);
}

#[test]
fn wrong_rate_or_channels_is_a_validation_error() {
    let f = Fixture::new();
    write_wav(Path::new(&f.path("8k.wav")), 6, 8_000, 800, SampleFormat::Float);
    let o = fsb(&["enhance", "--weights", &f.path("w.fsbw"), "--in", &f.path("8k.wav"), "--out", &f.path("o.wav")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sample rate"));

    write_wav(Path::new(&f.path("2ch.wav")), 2, 16_000, 800, SampleFormat::Float);
    let o = fsb(&["enhance", "--weights", &f.path("w.fsbw"), "--in", &f.path("2ch.wav"), "--out", &f.path("o.wav")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("channels"));

    let o =
        fsb(&["enhance", "--weights", &f.path("missing.fsbw"), "--in", &f.path("2ch.wav"), "--out", &f.path("o.wav")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_weight_files() {
    let f = Fixture::new();
    for (name, seed) in [("a", "9"), ("b", "9"), ("c", "10")] {
        assert!(fsb(&["init-weights", "--preset", "fsb-2ch", "--seed", seed, "--out", &f.path(name)]).status.success());
    }
    let read = |n: &str| std::fs::read(f.path(n)).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn init_and_analyze_agree_on_parameter_count() {
    let f = Fixture::new();
    for preset in ["fsb-6ch", "fb6-1ch", "fb9-2ch"] {
        let init = fsb(&["init-weights", "--preset", preset, "--out", &f.path("p.fsbw")]);
        let analyze = fsb(&["analyze", "--preset", preset]);
        assert!(init.status.success() && analyze.status.success());
        assert_eq!(key(&init, "params"), key(&analyze, "params"), "{preset}");
    }
}

#[test]
fn analyze_reports_table_and_keys() {
    let o = fsb(&["analyze", "--preset", "fsb-6ch"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("block0.fb.lstm"));
    assert_eq!(key(&o, "params"), "1955203");
    assert_eq!(key(&o, "buffer_bytes"), "46188");
    let fast = fsb(&["analyze", "--preset", "fb6-6ch", "--hop-ms", "1"]);
    let g: f64 = key(&fast, "gmacs_per_second").parse().unwrap();
    assert!((g / 4.65 - 1.0).abs() <= 0.05, "{g}");
}

#[test]
fn analyze_accepts_json_config() {
    let f = Fixture::new();
    let o = fsb(&["analyze", "--preset", "fsb-1ch"]);
    let json = r#"{"modules":3,"embed_dim":32,
        "full_band":{"channels":8,"kernel":8,"stride":4,"hidden":256},
        "sub_band":{"channels":64,"kernel":5,"stride":5,"hidden":64},
        "mics":1,
        "stft":{"sample_rate":16000,"iws":256,"hs":32,"ows":64,"dft_size":256},
        "variant":{"kind":"fsb"}}"#;
    std::fs::write(f.path("c.json"), json).unwrap();
    let c = fsb(&["analyze", "--config", &f.path("c.json")]);
    assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
    assert_eq!(key(&c, "params"), key(&o, "params"));

    std::fs::write(f.path("bad.json"), r#"{"modules":0}"#).unwrap();
    assert_eq!(fsb(&["analyze", "--config", &f.path("bad.json")]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    assert_eq!(fsb(&[]).status.code(), Some(1));
    assert_eq!(fsb(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fsb(&["analyze", "--preset", "fsb-6ch", "--config", "x.json"]).status.code(), Some(1));
    assert_eq!(fsb(&["--help"]).status.code(), Some(0));
    assert_eq!(fsb(&["--version"]).status.code(), Some(0));
    assert_eq!(fsb(&["analyze", "--preset", "fsb-7ch"]).status.code(), Some(2));
}

#[test]
fn selfcheck_suites_pass() {
    for suite in ["stft", "deconv", "stream", "grad"] {
        let o = fsb(&["selfcheck", "--suite", suite]);
        assert!(o.status.success(), "{suite}: {}", stdout(&o));
        assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
    }
}

#[test]
fn train_toy_writes_trace() {
    let f = Fixture::new();
    let o = fsb(&["train-toy", "--steps", "5", "--seed", "2", "--out", &f.path("trace.csv")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(f.path("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "step,loss");
    assert_eq!(lines.len(), 6);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap().is_finite()));
    assert!(!key(&o, "loss_reduction").is_empty());
}
