use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{
    cgln, conv_freq, deconv_freq, linear, lstm_sequence, pad_last, prelu, slice_last, CglnStats, LstmWeights,
    NormLayout, CGLN_EPS,
};
use crate::model::weights::{Affine, FullBand, Lstm, ModelWeights, SubBand};
use crate::tensor::{permute3, Scalar, Tensor};

pub type Weights<T> = ModelWeights<Tensor<T>>;

/// Hidden and cell state of `N` LSTM sequences, each `N·H` values.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(sequences: usize, hidden: usize) -> Self {
        Self { h: Tensor::zeros(&[sequences * hidden]), c: Tensor::zeros(&[sequences * hidden]) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FullBandState<T> {
    pub lstm: LstmState<T>,
    pub norm1: CglnStats<T>,
    pub norm2: CglnStats<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubBandState<T> {
    pub lstm: LstmState<T>,
    pub norm: CglnStats<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageState<T> {
    pub fb: FullBandState<T>,
    pub sb: Option<SubBandState<T>>,
}

/// Recurrent state carried between frames: LSTM `(h, c)` and cGLN statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NetState<T> {
    pub stages: Vec<StageState<T>>,
    pub frames: usize,
}

impl<T: Scalar> NetState<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        let stage = || StageState {
            fb: FullBandState {
                lstm: LstmState::zeros(1, cfg.full_band.hidden),
                norm1: CglnStats::new(),
                norm2: CglnStats::new(),
            },
            sb: cfg.has_sub_band().then(|| SubBandState {
                lstm: LstmState::zeros(cfg.sub_bands(), cfg.sub_band.hidden),
                norm: CglnStats::new(),
            }),
        };
        Self { stages: (0..cfg.stages()).map(|_| stage()).collect(), frames: 0 }
    }

    /// Number of LSTM `h` and `c` values held across frames.
    pub fn lstm_floats(&self) -> usize {
        let lstm = |l: &LstmState<T>| l.h.len() + l.c.len();
        self.stages.iter().map(|s| lstm(&s.fb.lstm) + s.sb.as_ref().map_or(0, |sb| lstm(&sb.lstm))).sum()
    }
}

fn lstm_weights<T: Scalar>(l: &Lstm<Tensor<T>>) -> LstmWeights<'_, T> {
    LstmWeights { wi: &l.wi, wh: &l.wh, bi: &l.bi, bh: &l.bh }
}

/// Runs an LSTM over `x` (`N×T×In`) from `state`, returns `N×T×H` hidden
/// outputs and leaves the final state in `state`.
fn run_lstm<T: Scalar>(x: &Tensor<T>, w: &Lstm<Tensor<T>>, state: &mut LstmState<T>) -> Result<Tensor<T>> {
    let hc = lstm_sequence(x, &state.h, &state.c, &lstm_weights(w))?;
    let (n, tt, two_h) = hc.dims3()?;
    let nh = two_h / 2;
    let mut h_out = Vec::with_capacity(n * tt * nh);
    for row in hc.data().chunks(two_h) {
        h_out.extend_from_slice(&row[..nh]);
    }
    if tt > 0 {
        let (h, c) = (state.h.data_mut(), state.c.data_mut());
        for s in 0..n {
            let last = &hc.data()[(s * tt + tt - 1) * two_h..(s * tt + tt) * two_h];
            h[s * nh..(s + 1) * nh].copy_from_slice(&last[..nh]);
            c[s * nh..(s + 1) * nh].copy_from_slice(&last[nh..]);
        }
    }
    Tensor::new(&[n, tt, nh], h_out)
}

fn slope<T: Scalar>(a: &Tensor<T>) -> T {
    a.data()[0]
}

fn residual<T: Scalar>(y: Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
    let mut y = y;
    for (a, b) in y.data_mut().iter_mut().zip(x.data()) {
        *a = *a + *b;
    }
    y
}

/// `C×T×P` → `T×(C·P)` with feature index `c·P + p`.
pub fn to_frames<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, tt, p) = x.dims3()?;
    permute3(x, [1, 0, 2])?.reshape(&[tt, c * p])
}

/// Inverse of [`to_frames`].
pub fn from_frames<T: Scalar>(x: &Tensor<T>, channels: usize) -> Result<Tensor<T>> {
    let (tt, a) = x.dims2()?;
    let x3 = x.clone().reshape(&[tt, channels, a / channels])?;
    permute3(&x3, [1, 0, 2])
}

pub fn input_embed<T: Scalar>(cfg: &ModelConfig, w: &Affine<Tensor<T>>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, _, f) = x.dims3()?;
    if c != cfg.input_channels() || f != cfg.freq_bins() {
        return Err(Error::Shape(format!(
            "model expects {}×T×{} input, got {:?}",
            cfg.input_channels(),
            cfg.freq_bins(),
            x.shape()
        )));
    }
    conv_freq(&pad_last(x, 1, 1), &w.w, &w.b, 1)
}

pub fn full_band_block<T: Scalar>(
    cfg: &ModelConfig,
    w: &FullBand<Tensor<T>>,
    x: &Tensor<T>,
    st: &mut FullBandState<T>,
) -> Result<Tensor<T>> {
    let (_, tt, f) = x.dims3()?;
    let bc = cfg.full_band;
    let eps = T::lit(CGLN_EPS);
    let down = conv_freq(&pad_last(x, 0, bc.padded(f) - f), &w.conv.w, &w.conv.b, bc.stride)?;
    let a = prelu(&to_frames(&down)?, slope(&w.prelu1.a));
    let a = cgln(&a, NormLayout::Frames, &w.norm1.g, &w.norm1.b, eps, &mut st.norm1)?;
    let dim = a.shape()[1];
    let h = run_lstm(&a.reshape(&[1, tt, dim])?, &w.lstm, &mut st.lstm)?;
    let h = h.reshape(&[tt, bc.hidden])?;
    let y = linear(&h, &w.lin.w, &w.lin.b)?;
    let y = cgln(&y, NormLayout::Frames, &w.norm2.g, &w.norm2.b, eps, &mut st.norm2)?;
    let y = prelu(&y, slope(&w.prelu2.a));
    let up = deconv_freq(&from_frames(&y, bc.channels)?, &w.deconv.w, &w.deconv.b, bc.stride)?;
    Ok(residual(slice_last(&up, 0, f)?, x))
}

pub fn sub_band_block<T: Scalar>(
    cfg: &ModelConfig,
    w: &SubBand<Tensor<T>>,
    x: &Tensor<T>,
    st: &mut SubBandState<T>,
) -> Result<Tensor<T>> {
    let f = x.shape()[2];
    let bc = cfg.sub_band;
    let down = conv_freq(&pad_last(x, 0, bc.padded(f) - f), &w.conv.w, &w.conv.b, bc.stride)?;
    let z = prelu(&down, slope(&w.prelu.a));
    let z = cgln(&z, NormLayout::ChannelTimeFreq, &w.norm.g, &w.norm.b, T::lit(CGLN_EPS), &mut st.norm)?;
    // S×T×E′: one sequence per sub-band.
    let h = run_lstm(&permute3(&z, [2, 1, 0])?, &w.lstm, &mut st.lstm)?;
    let up = deconv_freq(&permute3(&h, [2, 1, 0])?, &w.deconv.w, &w.deconv.b, bc.stride)?;
    Ok(residual(slice_last(&up, 0, f)?, x))
}

pub fn output_project<T: Scalar>(w: &Affine<Tensor<T>>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let f = x.shape()[2];
    slice_last(&deconv_freq(x, &w.w, &w.b, 1)?, 1, f)
}

/// An FSB-LSTM or full-band-stack network with validated weights.
#[derive(Clone, Debug)]
pub struct Network<T: Scalar> {
    cfg: ModelConfig,
    weights: Weights<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(cfg: ModelConfig, weights: Weights<T>) -> Result<Self> {
        check_weights(&cfg, &weights)?;
        Ok(Self { cfg, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &Weights<T> {
        &self.weights
    }

    pub fn into_weights(self) -> Weights<T> {
        self.weights
    }

    pub fn new_state(&self) -> NetState<T> {
        NetState::new(&self.cfg)
    }

    /// Runs frames `2P×T×F` from `state`, updating it. Returns `2×T×F`.
    pub fn forward(&self, x: &Tensor<T>, state: &mut NetState<T>) -> Result<Tensor<T>> {
        if state.stages.len() != self.weights.stages.len()
            || state.stages.iter().any(|s| s.sb.is_some() != self.cfg.has_sub_band())
        {
            return Err(Error::Stream("state was not created for this network".into()));
        }
        let mut h = input_embed(&self.cfg, &self.weights.input_conv, x)?;
        for (w, s) in self.weights.stages.iter().zip(&mut state.stages) {
            h = full_band_block(&self.cfg, &w.fb, &h, &mut s.fb)?;
            if let (Some(wsb), Some(ssb)) = (&w.sb, &mut s.sb) {
                h = sub_band_block(&self.cfg, wsb, &h, ssb)?;
            }
        }
        state.frames += x.shape()[1];
        output_project(&self.weights.output_deconv, &h)
    }

    /// Whole-utterance inference from a fresh state.
    pub fn forward_offline(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(x, &mut self.new_state())
    }

    /// One frame `2P×F` in, one frame `2×F` out.
    pub fn step_online(&self, frame: &Tensor<T>, state: &mut NetState<T>) -> Result<Tensor<T>> {
        let (c, f) = frame.dims2()?;
        let y = self.forward(&frame.clone().reshape(&[c, 1, f])?, state)?;
        y.reshape(&[2, f])
    }
}

/// Checks that `w` holds exactly the tensors and shapes implied by `cfg`.
pub fn check_weights<T: Scalar>(cfg: &ModelConfig, w: &Weights<T>) -> Result<()> {
    let layout = ModelWeights::layout(cfg)?;
    let expected = layout.named();
    let got = w.named();
    if expected.len() != got.len() {
        return Err(Error::Shape(format!("expected {} tensors, found {}", expected.len(), got.len())));
    }
    for ((name, spec), (_, t)) in expected.iter().zip(&got) {
        if spec.shape != t.shape() {
            return Err(Error::Shape(format!("{name}: expected shape {:?}, found {:?}", spec.shape, t.shape())));
        }
    }
    Ok(())
}
