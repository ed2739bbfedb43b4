//! Asymmetric-window STFT for low-latency processing.
//!
//! Analysis uses a rectangular window of `iws` samples zero-padded to
//! `dft_size`. Synthesis keeps only the last `ows` samples of each inverse
//! transform, weights them with a short window and overlap-adds at hop `hs`.
//! The algorithmic latency is therefore `ows` samples rather than `iws`.
//!
//! Framing: the signal is left-padded with `iws − ows` zeros and frame `t`
//! covers padded samples `[t·hs, t·hs + iws)`. Its synthesis segment lands on
//! output samples `[t·hs, t·hs + ows)`, so output index `n` lines up with
//! input index `n`. The first `hs` output samples only receive one segment
//! and are treated as warm-up.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    /// Input (analysis) window size in samples.
    pub iws: usize,
    /// Hop size in samples.
    pub hs: usize,
    /// Output (synthesis) window size in samples.
    pub ows: usize,
    pub dft_size: usize,
}

impl Default for StftConfig {
    /// 16 kHz, 16 ms input window, 2 ms hop, 4 ms output window, 256-point DFT.
    fn default() -> Self {
        Self { sample_rate: 16_000, iws: 256, hs: 32, ows: 64, dft_size: 256 }
    }
}

impl StftConfig {
    /// Default 16 ms input window with the given hop; the output window is
    /// two hops so overlap-add stays at 50%.
    pub fn with_hop_ms(hop_ms: f64) -> Result<Self> {
        let base = Self::default();
        let hs = (hop_ms * base.sample_rate as f64 / 1000.0).round() as usize;
        let cfg = Self { hs, ows: 2 * hs, ..base };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("stft: {m} ({self:?})")));
        if self.sample_rate == 0 || self.hs == 0 || self.iws == 0 || self.ows == 0 {
            return bad("all sizes must be positive");
        }
        if !self.iws.is_multiple_of(self.hs) || !self.ows.is_multiple_of(self.hs) {
            return bad("window sizes must be multiples of the hop size");
        }
        if self.ows > self.iws {
            return bad("output window larger than input window");
        }
        if self.dft_size < self.iws || !self.dft_size.is_multiple_of(2) {
            return bad("dft size must be even and at least the input window");
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.dft_size / 2 + 1
    }

    pub fn left_pad(&self) -> usize {
        self.iws - self.ows
    }

    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hs as f64
    }

    /// Frame count of [`offline_stft`] for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        (len + self.left_pad()).div_ceil(self.hs)
    }

    pub fn latency_samples(&self) -> usize {
        self.ows
    }

    pub fn latency_ms(&self) -> f64 {
        1000.0 * self.ows as f64 / self.sample_rate as f64
    }

    /// Zero chunks to push after the last input chunk so every input sample
    /// reaches finalized output.
    pub fn flush_chunks(&self) -> usize {
        self.ows / self.hs - 1
    }
}

/// Synthesis window: periodic Hann of length `ows`, scaled so its hop-`hs`
/// shifts sum to one. With a single hop per window it degenerates to a
/// rectangle.
pub fn synthesis_window(cfg: &StftConfig) -> Vec<f64> {
    let n = cfg.ows;
    if n == cfg.hs {
        return vec![1.0; n];
    }
    let mut w: Vec<f64> =
        (0..n).map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()).collect();
    let mut sums = vec![0.0; cfg.hs];
    for (k, v) in w.iter().enumerate() {
        sums[k % cfg.hs] += v;
    }
    for (k, v) in w.iter_mut().enumerate() {
        *v /= sums[k % cfg.hs];
    }
    w
}

/// Real-input DFT of size `dft_size` returning bins `0..=N/2`.
pub struct RealDft<T: Scalar> {
    n: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
    buf: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: Scalar> RealDft<T> {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self {
            n,
            fwd,
            inv,
            buf: vec![Complex::new(T::zero(), T::zero()); n],
            scratch: vec![Complex::new(T::zero(), T::zero()); scratch_len],
        }
    }

    /// Transforms `frame` (zero-padded to `n`) into `re` and `im`.
    pub fn forward(&mut self, frame: &[T], re: &mut [T], im: &mut [T]) {
        for (k, b) in self.buf.iter_mut().enumerate() {
            *b = Complex::new(frame.get(k).copied().unwrap_or_else(T::zero), T::zero());
        }
        self.fwd.process_with_scratch(&mut self.buf, &mut self.scratch);
        for k in 0..re.len() {
            re[k] = self.buf[k].re;
            im[k] = self.buf[k].im;
        }
    }

    /// Adjoint of [`RealDft::forward`]: `out[n] = Σ_k re[k]·cos(2πkn/N) − im[k]·sin(2πkn/N)`.
    pub fn adjoint(&mut self, re: &[T], im: &[T], out: &mut [T]) {
        for (k, b) in self.buf.iter_mut().enumerate() {
            *b = if k < re.len() { Complex::new(re[k], im[k]) } else { Complex::new(T::zero(), T::zero()) };
        }
        self.inv.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re;
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }
}

/// Windowed partial inverse DFT: row `j` maps `[re | im]` (length `2F`) to the
/// weighted output sample `j` of the synthesis segment.
fn synthesis_basis<T: Scalar>(cfg: &StftConfig) -> Vec<T> {
    let n = cfg.dft_size;
    let nf = cfg.freq_bins();
    let win = synthesis_window(cfg);
    let mut basis = vec![T::zero(); cfg.ows * 2 * nf];
    for j in 0..cfg.ows {
        let p = (cfg.iws - cfg.ows + j) as f64;
        for k in 0..nf {
            let scale = if k == 0 || 2 * k == n { 1.0 } else { 2.0 } / n as f64;
            let ang = 2.0 * std::f64::consts::PI * (k as f64) * p / n as f64;
            let im_coef = if k == 0 || 2 * k == n { 0.0 } else { -scale * ang.sin() };
            basis[j * 2 * nf + k] = T::lit(win[j] * scale * ang.cos());
            basis[j * 2 * nf + nf + k] = T::lit(win[j] * im_coef);
        }
    }
    basis
}

/// Streaming analysis state: the latest `iws` input samples of one channel.
pub struct StftAnalyzer<T: Scalar> {
    cfg: StftConfig,
    ring: Vec<T>,
    received: usize,
    dft: RealDft<T>,
    spectrum: Vec<T>,
}

impl<T: Scalar> StftAnalyzer<T> {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            ring: vec![T::zero(); cfg.iws],
            received: 0,
            dft: RealDft::new(cfg.dft_size),
            spectrum: vec![T::zero(); 2 * cfg.freq_bins()],
        })
    }

    /// Appends one hop of samples. Returns the spectrum `[re | im]` of the
    /// newest frame once enough input has arrived to fill a synthesis
    /// segment; before that (the first `ows/hs − 1` chunks) returns `None`.
    pub fn push(&mut self, chunk: &[T]) -> Result<Option<&[T]>> {
        let hs = self.cfg.hs;
        if chunk.len() != hs {
            return Err(Error::Stream(format!("chunk of {} samples, hop is {}", chunk.len(), hs)));
        }
        self.ring.copy_within(hs.., 0);
        let iws = self.cfg.iws;
        self.ring[iws - hs..].copy_from_slice(chunk);
        self.received += hs;
        if self.received < self.cfg.ows {
            return Ok(None);
        }
        let nf = self.cfg.freq_bins();
        let (re, im) = self.spectrum.split_at_mut(nf);
        self.dft.forward(&self.ring, re, im);
        Ok(Some(&self.spectrum))
    }

    pub fn samples_received(&self) -> usize {
        self.received
    }

    pub fn buffered(&self) -> usize {
        self.ring.len()
    }
}

/// Streaming synthesis state: the overlap-add accumulator.
pub struct StftSynthesizer<T: Scalar> {
    cfg: StftConfig,
    basis: Vec<T>,
    ola: Vec<T>,
    emitted: usize,
}

impl<T: Scalar> StftSynthesizer<T> {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, basis: synthesis_basis(&cfg), ola: vec![T::zero(); cfg.ows], emitted: 0 })
    }

    /// Overlap-adds one frame `[re | im]` and writes the `hs` samples that are
    /// now final into `out`.
    pub fn push(&mut self, spectrum: &[T], out: &mut [T]) -> Result<()> {
        let nf = self.cfg.freq_bins();
        if spectrum.len() != 2 * nf {
            return Err(Error::Stream(format!("spectrum of {} values, expected {}", spectrum.len(), 2 * nf)));
        }
        if out.len() != self.cfg.hs {
            return Err(Error::Stream("output buffer must hold one hop".into()));
        }
        for (j, acc) in self.ola.iter_mut().enumerate() {
            *acc = *acc + crate::tensor::dot(&self.basis[j * 2 * nf..(j + 1) * 2 * nf], spectrum);
        }
        let hs = self.cfg.hs;
        out.copy_from_slice(&self.ola[..hs]);
        self.ola.copy_within(hs.., 0);
        let n = self.ola.len();
        self.ola[n - hs..].iter_mut().for_each(|v| *v = T::zero());
        self.emitted += hs;
        Ok(())
    }

    pub fn samples_emitted(&self) -> usize {
        self.emitted
    }

    pub fn buffered(&self) -> usize {
        self.ola.len()
    }
}

fn check_ri<T: Scalar>(cfg: &StftConfig, ri: &Tensor<T>) -> Result<usize> {
    let (two, tt, nf) = ri.dims3()?;
    if two != 2 || nf != cfg.freq_bins() {
        return Err(Error::Shape(format!("expected 2×T×{} spectrum, got {:?}", cfg.freq_bins(), ri.shape())));
    }
    Ok(tt)
}

/// Whole-signal analysis. Returns `2×T×F` (real plane, imaginary plane) with
/// `T = ceil((len + iws − ows) / hs)`.
pub fn offline_stft<T: Scalar>(cfg: &StftConfig, signal: &[T]) -> Result<Tensor<T>> {
    cfg.validate()?;
    let nf = cfg.freq_bins();
    let tt = cfg.num_frames(signal.len());
    let pad = cfg.left_pad();
    let mut dft = RealDft::new(cfg.dft_size);
    let mut frame = vec![T::zero(); cfg.iws];
    let mut out = vec![T::zero(); 2 * tt * nf];
    let (re_plane, im_plane) = out.split_at_mut(tt * nf);
    for t in 0..tt {
        for (k, v) in frame.iter_mut().enumerate() {
            let p = t * cfg.hs + k;
            *v = if p >= pad { signal.get(p - pad).copied().unwrap_or_else(T::zero) } else { T::zero() };
        }
        dft.forward(&frame, &mut re_plane[t * nf..(t + 1) * nf], &mut im_plane[t * nf..(t + 1) * nf]);
    }
    Tensor::new(&[2, tt, nf], out)
}

/// Adjoint of [`offline_stft`]: maps a gradient on the `2×T×F` spectrum to a
/// gradient on the `len`-sample signal.
pub fn offline_stft_adjoint<T: Scalar>(cfg: &StftConfig, g: &Tensor<T>, len: usize) -> Result<Vec<T>> {
    let tt = check_ri(cfg, g)?;
    let nf = cfg.freq_bins();
    let pad = cfg.left_pad();
    let mut dft = RealDft::new(cfg.dft_size);
    let mut frame = vec![T::zero(); cfg.dft_size];
    let mut out = vec![T::zero(); len];
    let (re, im) = g.data().split_at(tt * nf);
    for t in 0..tt {
        dft.adjoint(&re[t * nf..(t + 1) * nf], &im[t * nf..(t + 1) * nf], &mut frame);
        for (k, v) in frame[..cfg.iws].iter().enumerate() {
            let p = t * cfg.hs + k;
            if p >= pad && p - pad < len {
                out[p - pad] = out[p - pad] + *v;
            }
        }
    }
    Ok(out)
}

/// Whole-signal synthesis of `len` samples from a `2×T×F` spectrum.
pub fn offline_istft<T: Scalar>(cfg: &StftConfig, ri: &Tensor<T>, len: usize) -> Result<Vec<T>> {
    cfg.validate()?;
    let tt = check_ri(cfg, ri)?;
    let nf = cfg.freq_bins();
    let basis = synthesis_basis::<T>(cfg);
    let (re, im) = ri.data().split_at(tt * nf);
    let mut spec = vec![T::zero(); 2 * nf];
    let mut out = vec![T::zero(); len];
    for t in 0..tt {
        spec[..nf].copy_from_slice(&re[t * nf..(t + 1) * nf]);
        spec[nf..].copy_from_slice(&im[t * nf..(t + 1) * nf]);
        for j in 0..cfg.ows {
            let n = t * cfg.hs + j;
            if n < len {
                out[n] = out[n] + crate::tensor::dot(&basis[j * 2 * nf..(j + 1) * 2 * nf], &spec);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`offline_istft`].
pub fn offline_istft_adjoint<T: Scalar>(cfg: &StftConfig, g: &[T], frames: usize) -> Result<Tensor<T>> {
    let nf = cfg.freq_bins();
    let basis = synthesis_basis::<T>(cfg);
    let mut out = vec![T::zero(); 2 * frames * nf];
    let (re, im) = out.split_at_mut(frames * nf);
    for t in 0..frames {
        for j in 0..cfg.ows {
            let n = t * cfg.hs + j;
            let Some(&gv) = g.get(n) else { continue };
            let row = &basis[j * 2 * nf..(j + 1) * 2 * nf];
            for k in 0..nf {
                re[t * nf + k] = re[t * nf + k] + gv * row[k];
                im[t * nf + k] = im[t * nf + k] + gv * row[nf + k];
            }
        }
    }
    Tensor::new(&[2, frames, nf], out)
}

/// Analysis followed directly by synthesis, chunk by chunk, with the flush.
/// Output has the input's length.
pub fn stream_passthrough<T: Scalar>(cfg: &StftConfig, signal: &[T]) -> Result<Vec<T>> {
    let mut ana = StftAnalyzer::new(*cfg)?;
    let mut syn = StftSynthesizer::new(*cfg)?;
    let chunks = signal.len().div_ceil(cfg.hs) + cfg.flush_chunks();
    let mut chunk = vec![T::zero(); cfg.hs];
    let mut hop = vec![T::zero(); cfg.hs];
    let mut out = Vec::with_capacity(chunks * cfg.hs);
    for c in 0..chunks {
        for (k, v) in chunk.iter_mut().enumerate() {
            *v = signal.get(c * cfg.hs + k).copied().unwrap_or_else(T::zero);
        }
        if let Some(spec) = ana.push(&chunk)? {
            syn.push(spec, &mut hop)?;
            out.extend_from_slice(&hop);
        }
    }
    out.truncate(signal.len());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let cfg = StftConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.freq_bins(), 129);
        assert_eq!(cfg.left_pad(), 192);
        assert_eq!(cfg.latency_ms(), 4.0);
        assert_eq!(cfg.num_frames(16_000), (16_000 + 192usize).div_ceil(32));
    }

    #[test]
    fn rejects_bad_configs() {
        let base = StftConfig::default();
        assert!(StftConfig { hs: 30, ..base }.validate().is_err());
        assert!(StftConfig { ows: 512, ..base }.validate().is_err());
        assert!(StftConfig { dft_size: 128, ..base }.validate().is_err());
    }

    #[test]
    fn window_sums_to_one() {
        for hop_ms in [1.0, 2.0, 4.0, 8.0] {
            let cfg = StftConfig::with_hop_ms(hop_ms).unwrap();
            let w = synthesis_window(&cfg);
            for j in 0..cfg.hs {
                let s: f64 = (0..cfg.ows / cfg.hs).map(|m| w[j + m * cfg.hs]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let cfg = StftConfig::default();
        let out = stream_passthrough(&cfg, &vec![0.0f32; 1000]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_chunk_is_rejected() {
        let mut a = StftAnalyzer::<f32>::new(StftConfig::default()).unwrap();
        assert!(a.push(&[0.0; 31]).is_err());
        let mut s = StftSynthesizer::<f32>::new(StftConfig::default()).unwrap();
        assert!(s.push(&[0.0; 100], &mut [0.0; 32]).is_err());
    }

    #[test]
    fn first_frame_arrives_after_output_window() {
        let cfg = StftConfig::default();
        let mut a = StftAnalyzer::<f64>::new(cfg).unwrap();
        assert!(a.push(&[0.0; 32]).unwrap().is_none());
        assert!(a.push(&[0.0; 32]).unwrap().is_some());
        assert_eq!(cfg.flush_chunks(), 1);
    }
}
