//! Sample-domain streaming: STFT analysis per microphone, one network step per
//! hop, overlap-add synthesis.

use crate::error::{Error, Result};
use crate::model::net::{NetState, Network};
use crate::stft::{StftAnalyzer, StftSynthesizer};
use crate::tensor::{Scalar, Tensor};

/// Everything one stream carries between hops.
pub struct StreamState<T: Scalar> {
    pub net: NetState<T>,
    analyzers: Vec<StftAnalyzer<T>>,
    synth: StftSynthesizer<T>,
    frame: Tensor<T>,
    pending: Vec<Vec<T>>,
    samples_in: usize,
    samples_out: usize,
}

impl<T: Scalar> StreamState<T> {
    pub fn new(net: &Network<T>) -> Result<Self> {
        let cfg = net.config();
        let p = cfg.mics;
        Ok(Self {
            net: net.new_state(),
            analyzers: (0..p).map(|_| StftAnalyzer::new(cfg.stft)).collect::<Result<_>>()?,
            synth: StftSynthesizer::new(cfg.stft)?,
            frame: Tensor::zeros(&[2 * p, cfg.freq_bins()]),
            pending: vec![Vec::new(); p],
            samples_in: 0,
            samples_out: 0,
        })
    }

    /// Samples held by the STFT ring and overlap-add buffers.
    pub fn stft_buffer_samples(&self) -> usize {
        self.analyzers.iter().map(|a| a.buffered()).sum::<usize>() + self.synth.buffered()
    }
}

/// Streaming enhancer for one utterance.
pub struct Enhancer<'a, T: Scalar> {
    net: &'a Network<T>,
    state: StreamState<T>,
}

impl<'a, T: Scalar> Enhancer<'a, T> {
    pub fn new(net: &'a Network<T>) -> Result<Self> {
        Ok(Self { net, state: StreamState::new(net)? })
    }

    pub fn state(&self) -> &StreamState<T> {
        &self.state
    }

    /// Processes one hop per microphone; writes a hop of output once the
    /// first synthesis segment is available and returns whether it did.
    pub fn push_hop(&mut self, hops: &[&[T]], out: &mut [T]) -> Result<bool> {
        let cfg = self.net.config();
        if hops.len() != cfg.mics {
            return Err(Error::Stream(format!("{} channels, model expects {}", hops.len(), cfg.mics)));
        }
        let nf = cfg.freq_bins();
        let st = &mut self.state;
        let mut ready = true;
        for (m, (ana, hop)) in st.analyzers.iter_mut().zip(hops).enumerate() {
            match ana.push(hop)? {
                Some(spec) => {
                    let d = st.frame.data_mut();
                    d[2 * m * nf..(2 * m + 1) * nf].copy_from_slice(&spec[..nf]);
                    d[(2 * m + 1) * nf..(2 * m + 2) * nf].copy_from_slice(&spec[nf..]);
                }
                None => ready = false,
            }
        }
        if !ready {
            return Ok(false);
        }
        let y = self.net.step_online(&st.frame, &mut st.net)?;
        st.synth.push(y.data(), out)?;
        Ok(true)
    }

    /// Feeds equally long blocks of samples, one per microphone, of any
    /// length. Returns the output samples finalized so far.
    pub fn process(&mut self, mics: &[&[T]]) -> Result<Vec<T>> {
        let cfg = *self.net.config();
        if mics.len() != cfg.mics {
            return Err(Error::Stream(format!("{} channels, model expects {}", mics.len(), cfg.mics)));
        }
        let n = mics[0].len();
        if mics.iter().any(|m| m.len() != n) {
            return Err(Error::Stream("channels have different lengths".into()));
        }
        for (p, m) in self.state.pending.iter_mut().zip(mics) {
            p.extend_from_slice(m);
        }
        self.state.samples_in += n;
        let hs = cfg.stft.hs;
        let mut out = Vec::new();
        let mut hop_out = vec![T::zero(); hs];
        let hops = self.state.pending[0].len() / hs;
        for k in 0..hops {
            let chunk: Vec<Vec<T>> = self.state.pending.iter().map(|p| p[k * hs..(k + 1) * hs].to_vec()).collect();
            let refs: Vec<&[T]> = chunk.iter().map(|c| c.as_slice()).collect();
            if self.push_hop(&refs, &mut hop_out)? {
                out.extend_from_slice(&hop_out);
            }
        }
        for p in &mut self.state.pending {
            p.drain(..hops * hs);
        }
        self.emit(out)
    }

    /// Pushes zeros until every input sample is represented in the output and
    /// returns the remaining output, so that the total output length equals
    /// the total input length.
    pub fn finish(mut self) -> Result<Vec<T>> {
        let cfg = *self.net.config();
        let hs = cfg.stft.hs;
        let rem = self.state.pending[0].len();
        let pad = if rem == 0 { 0 } else { hs - rem };
        let zeros = vec![vec![T::zero(); pad + cfg.stft.flush_chunks() * hs]; cfg.mics];
        let refs: Vec<&[T]> = zeros.iter().map(|z| z.as_slice()).collect();
        let real_in = self.state.samples_in;
        let mut out = self.process(&refs)?;
        let extra = self.state.samples_out - real_in;
        out.truncate(out.len() - extra);
        Ok(out)
    }

    fn emit(&mut self, out: Vec<T>) -> Result<Vec<T>> {
        self.state.samples_out += out.len();
        Ok(out)
    }
}

/// Enhances whole signals (one per microphone) through the streaming path.
pub fn enhance_stream<T: Scalar>(net: &Network<T>, mics: &[&[T]]) -> Result<Vec<T>> {
    let mut e = Enhancer::new(net)?;
    let mut out = e.process(mics)?;
    out.extend(e.finish()?);
    Ok(out)
}
