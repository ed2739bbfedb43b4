//! Closed-form parameter, MAC and state-buffer accounting.
//!
//! One MAC is one multiply-add inside a dense product (conv, deconv, linear,
//! LSTM gates). Biases, activations and normalization are not counted. The
//! deconvolution is counted in its overlap-add form.

use std::fmt;

use crate::config::ModelConfig;
use crate::error::Result;

/// Bytes per stored value in the streaming path.
const F32: usize = 4;
/// cGLN running sum, sum of squares and count, 4 bytes each.
const CGLN_ACCUMULATOR_BYTES: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRow {
    pub name: String,
    pub params: usize,
    pub macs_per_frame: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BufferRow {
    pub name: String,
    pub bytes: usize,
    /// Part of the model state total (STFT buffers are listed but excluded).
    pub in_total: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub config: ModelConfig,
    pub layers: Vec<LayerRow>,
    pub buffers: Vec<BufferRow>,
}

fn row(name: String, params: usize, macs: usize) -> LayerRow {
    LayerRow { name, params, macs_per_frame: macs }
}

fn lstm_params(n_in: usize, h: usize) -> usize {
    4 * (n_in * h + h * h + 2 * h)
}

impl ComplexityReport {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.freq_bins();
        let d = cfg.embed_dim;
        let fb = cfg.full_band;
        let sb = cfg.sub_band;
        let pos = fb.positions(f);
        let a = cfg.frame_dim();
        let s = cfg.sub_bands();
        let cin = cfg.input_channels();

        let mut layers = vec![row("input_conv".into(), d * cin * 3 + d, d * cin * 3 * f)];
        let mut buffers = Vec::new();
        for i in 0..cfg.stages() {
            let p = format!("block{i}.fb");
            layers.extend([
                row(format!("{p}.conv"), fb.channels * d * fb.kernel + fb.channels, fb.channels * d * fb.kernel * pos),
                row(format!("{p}.prelu1"), 1, 0),
                row(format!("{p}.norm1"), 2 * a, 0),
                row(format!("{p}.lstm"), lstm_params(a, fb.hidden), 4 * fb.hidden * (a + fb.hidden)),
                row(format!("{p}.lin"), a * fb.hidden + a, a * fb.hidden),
                row(format!("{p}.norm2"), 2 * a, 0),
                row(format!("{p}.prelu2"), 1, 0),
                row(format!("{p}.deconv"), fb.channels * d * fb.kernel + d, fb.channels * d * fb.kernel * pos),
            ]);
            buffers.push(BufferRow { name: format!("{p}.lstm_state"), bytes: F32 * 2 * fb.hidden, in_total: true });
            buffers.push(BufferRow {
                name: format!("{p}.cgln_stats"),
                bytes: 2 * CGLN_ACCUMULATOR_BYTES,
                in_total: true,
            });
            if cfg.has_sub_band() {
                let p = format!("block{i}.sb");
                layers.extend([
                    row(
                        format!("{p}.conv"),
                        sb.channels * d * sb.kernel + sb.channels,
                        sb.channels * d * sb.kernel * s,
                    ),
                    row(format!("{p}.prelu"), 1, 0),
                    row(format!("{p}.norm"), 2 * sb.channels, 0),
                    row(
                        format!("{p}.lstm"),
                        lstm_params(sb.channels, sb.hidden),
                        s * 4 * sb.hidden * (sb.channels + sb.hidden),
                    ),
                    row(format!("{p}.deconv"), sb.hidden * d * sb.kernel + d, sb.hidden * d * sb.kernel * s),
                ]);
                buffers.push(BufferRow {
                    name: format!("{p}.lstm_state"),
                    bytes: F32 * 2 * sb.hidden * s,
                    in_total: true,
                });
                buffers.push(BufferRow {
                    name: format!("{p}.cgln_stats"),
                    bytes: CGLN_ACCUMULATOR_BYTES,
                    in_total: true,
                });
            }
        }
        layers.push(row("output_deconv".into(), d * 2 * 3 + 2, d * 2 * 3 * f));
        buffers.push(BufferRow {
            name: "stft.analysis_ring".into(),
            bytes: F32 * cfg.mics * cfg.stft.iws,
            in_total: false,
        });
        buffers.push(BufferRow { name: "stft.overlap_add".into(), bytes: F32 * cfg.stft.ows, in_total: false });
        Ok(Self { config: *cfg, layers, buffers })
    }

    pub fn params(&self) -> usize {
        self.layers.iter().map(|r| r.params).sum()
    }

    pub fn macs_per_frame(&self) -> usize {
        self.layers.iter().map(|r| r.macs_per_frame).sum()
    }

    pub fn gmacs_per_second(&self) -> f64 {
        self.macs_per_frame() as f64 * self.config.stft.frames_per_second() / 1e9
    }

    /// Model state bytes: LSTM states plus cGLN accumulators.
    pub fn buffer_bytes(&self) -> usize {
        self.buffers.iter().filter(|b| b.in_total).map(|b| b.bytes).sum()
    }

    pub fn lstm_state_bytes(&self) -> usize {
        self.buffers.iter().filter(|b| b.name.ends_with("lstm_state")).map(|b| b.bytes).sum()
    }

    pub fn stft_buffer_bytes(&self) -> usize {
        self.buffers.iter().filter(|b| !b.in_total).map(|b| b.bytes).sum()
    }

    fn macs_matching(&self, tag: &str) -> usize {
        self.layers.iter().filter(|r| r.name.contains(tag)).map(|r| r.macs_per_frame).sum()
    }

    pub fn full_band_macs(&self) -> usize {
        self.macs_matching(".fb.")
    }

    pub fn sub_band_macs(&self) -> usize {
        self.macs_matching(".sb.")
    }

    /// Sub-band over full-band MACs; zero for full-band stacks.
    pub fn sub_to_full_ratio(&self) -> f64 {
        self.sub_band_macs() as f64 / self.full_band_macs() as f64
    }

    /// `key=value` lines for scripts.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        kv("params", self.params().to_string());
        kv("params_m", format!("{:.4}", self.params() as f64 / 1e6));
        kv("macs_per_frame", self.macs_per_frame().to_string());
        kv("frames_per_second", format!("{}", self.config.stft.frames_per_second()));
        kv("gmacs_per_second", format!("{:.4}", self.gmacs_per_second()));
        kv("full_band_macs_per_frame", self.full_band_macs().to_string());
        kv("sub_band_macs_per_frame", self.sub_band_macs().to_string());
        kv("lstm_state_bytes", self.lstm_state_bytes().to_string());
        kv("buffer_bytes", self.buffer_bytes().to_string());
        kv("stft_buffer_bytes", self.stft_buffer_bytes().to_string());
        kv("latency_ms", format!("{}", self.config.stft.latency_ms()));
        s
    }
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>12} {:>14}", "layer", "params", "MACs/frame")?;
        for r in &self.layers {
            writeln!(f, "{:<24} {:>12} {:>14}", r.name, r.params, r.macs_per_frame)?;
        }
        writeln!(f, "{:<24} {:>12} {:>14}", "total", self.params(), self.macs_per_frame())?;
        writeln!(f)?;
        writeln!(f, "{:<24} {:>12}", "buffer", "bytes")?;
        for b in &self.buffers {
            let mark = if b.in_total { "" } else { " (excluded)" };
            writeln!(f, "{:<24} {:>12}{mark}", b.name, b.bytes)?;
        }
        writeln!(f, "{:<24} {:>12}", "total", self.buffer_bytes())?;
        writeln!(f)?;
        writeln!(f, "params:   {:.2} M", self.params() as f64 / 1e6)?;
        writeln!(
            f,
            "compute:  {:.3} GMAC/s at {} frames/s",
            self.gmacs_per_second(),
            self.config.stft.frames_per_second()
        )?;
        writeln!(f, "state:    {:.1} KB", self.buffer_bytes() as f64 / 1000.0)?;
        write!(f, "latency:  {} ms", self.config.stft.latency_ms())
    }
}

pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(ComplexityReport::new(cfg)?.params())
}

pub fn count_macs(cfg: &ModelConfig) -> Result<(usize, f64)> {
    let r = ComplexityReport::new(cfg)?;
    Ok((r.macs_per_frame(), r.gmacs_per_second()))
}

pub fn buffer_bytes(cfg: &ModelConfig) -> Result<usize> {
    Ok(ComplexityReport::new(cfg)?.buffer_bytes())
}
