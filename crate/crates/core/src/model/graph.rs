//! The network recorded on a [`Tape`], mirroring [`super::net`] op for op.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{NormLayout, CGLN_EPS};
use crate::model::net::Weights;
use crate::model::weights::{Affine, FullBand, Lstm, ModelWeights, SubBand};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
struct LstmVars {
    h: Var,
    c: Var,
}

#[derive(Clone, Copy, Debug)]
struct NormVars {
    moments: Option<Var>,
    count: usize,
}

#[derive(Clone, Copy, Debug)]
struct StageVars {
    fb_lstm: LstmVars,
    fb_norm1: NormVars,
    fb_norm2: NormVars,
    sb: Option<(LstmVars, NormVars)>,
}

/// Recurrent state as tape variables, so gradients flow across frames.
#[derive(Clone, Debug)]
pub struct GraphState {
    stages: Vec<StageVars>,
}

impl GraphState {
    pub fn new<T: Scalar>(tape: &mut Tape<T>, cfg: &ModelConfig) -> Self {
        let mut zeros = |n: usize| LstmVars { h: tape.leaf(Tensor::zeros(&[n])), c: tape.leaf(Tensor::zeros(&[n])) };
        let fresh = NormVars { moments: None, count: 0 };
        let stages = (0..cfg.stages())
            .map(|_| StageVars {
                fb_lstm: zeros(cfg.full_band.hidden),
                fb_norm1: fresh,
                fb_norm2: fresh,
                sb: cfg.has_sub_band().then(|| (zeros(cfg.sub_bands() * cfg.sub_band.hidden), fresh)),
            })
            .collect();
        Self { stages }
    }
}

/// Records every weight tensor as a leaf.
pub fn weight_leaves<T: Scalar>(tape: &mut Tape<T>, w: &Weights<T>) -> ModelWeights<Var> {
    w.map(|t| tape.leaf(t.clone()))
}

fn lstm<T: Scalar>(tape: &mut Tape<T>, x: Var, w: &Lstm<Var>, st: &mut LstmVars) -> Result<Var> {
    let hc = tape.lstm(x, st.h, st.c, w.wi, w.wh, w.bi, w.bh)?;
    let (n, tt, two_h) = tape.value(hc).dims3()?;
    let nh = two_h / 2;
    let by_time = tape.permute(hc, [1, 0, 2])?;
    let flat = tape.reshape(by_time, &[tt * n * two_h])?;
    let last = tape.slice_last(flat, (tt - 1) * n * two_h, n * two_h)?;
    let last = tape.reshape(last, &[n, 1, two_h])?;
    let h = tape.slice_last(last, 0, nh)?;
    let c = tape.slice_last(last, nh, nh)?;
    st.h = tape.reshape(h, &[n * nh])?;
    st.c = tape.reshape(c, &[n * nh])?;
    tape.slice_last(hc, 0, nh)
}

fn cgln<T: Scalar>(tape: &mut Tape<T>, x: Var, layout: NormLayout, g: Var, b: Var, st: &mut NormVars) -> Result<Var> {
    let (frames, per, _) = layout.geometry(tape.value(x))?;
    let (y, m) = tape.cgln(x, layout, g, b, T::lit(CGLN_EPS), st.moments, st.count)?;
    st.moments = Some(m);
    st.count += frames * per;
    Ok(y)
}

fn residual_trim<T: Scalar>(tape: &mut Tape<T>, up: Var, x: Var, f: usize) -> Result<Var> {
    let y = tape.slice_last(up, 0, f)?;
    tape.add(y, x)
}

fn full_band<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    w: &FullBand<Var>,
    x: Var,
    st: &mut StageVars,
) -> Result<Var> {
    let (_, tt, f) = tape.value(x).dims3()?;
    let bc = cfg.full_band;
    let xp = tape.pad_last(x, 0, bc.padded(f) - f)?;
    let down = tape.conv_freq(xp, w.conv.w, w.conv.b, bc.stride)?;
    let (e, _, p) = tape.value(down).dims3()?;
    let fr = tape.permute(down, [1, 0, 2])?;
    let fr = tape.reshape(fr, &[tt, e * p])?;
    let a = tape.prelu(fr, w.prelu1.a)?;
    let a = cgln(tape, a, NormLayout::Frames, w.norm1.g, w.norm1.b, &mut st.fb_norm1)?;
    let seq = tape.reshape(a, &[1, tt, e * p])?;
    let h = lstm(tape, seq, &w.lstm, &mut st.fb_lstm)?;
    let h = tape.reshape(h, &[tt, bc.hidden])?;
    let y = tape.linear(h, w.lin.w, w.lin.b)?;
    let y = cgln(tape, y, NormLayout::Frames, w.norm2.g, w.norm2.b, &mut st.fb_norm2)?;
    let y = tape.prelu(y, w.prelu2.a)?;
    let y = tape.reshape(y, &[tt, e, p])?;
    let y = tape.permute(y, [1, 0, 2])?;
    let up = tape.deconv_freq(y, w.deconv.w, w.deconv.b, bc.stride)?;
    residual_trim(tape, up, x, f)
}

fn sub_band<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    w: &SubBand<Var>,
    x: Var,
    st: &mut (LstmVars, NormVars),
) -> Result<Var> {
    let f = tape.value(x).shape()[2];
    let bc = cfg.sub_band;
    let xp = tape.pad_last(x, 0, bc.padded(f) - f)?;
    let down = tape.conv_freq(xp, w.conv.w, w.conv.b, bc.stride)?;
    let z = tape.prelu(down, w.prelu.a)?;
    let z = cgln(tape, z, NormLayout::ChannelTimeFreq, w.norm.g, w.norm.b, &mut st.1)?;
    let seq = tape.permute(z, [2, 1, 0])?;
    let h = lstm(tape, seq, &w.lstm, &mut st.0)?;
    let h = tape.permute(h, [2, 1, 0])?;
    let up = tape.deconv_freq(h, w.deconv.w, w.deconv.b, bc.stride)?;
    residual_trim(tape, up, x, f)
}

fn embed<T: Scalar>(tape: &mut Tape<T>, w: &Affine<Var>, x: Var) -> Result<Var> {
    let xp = tape.pad_last(x, 1, 1)?;
    tape.conv_freq(xp, w.w, w.b, 1)
}

/// Records frames `2P×T×F` from `state`; returns the `2×T×F` estimate.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    w: &ModelWeights<Var>,
    x: Var,
    state: &mut GraphState,
) -> Result<Var> {
    let (c, _, f) = tape.value(x).dims3()?;
    if c != cfg.input_channels() || f != cfg.freq_bins() {
        return Err(Error::Shape(format!("model expects {}×T×{} input", cfg.input_channels(), cfg.freq_bins())));
    }
    let mut h = embed(tape, &w.input_conv, x)?;
    for (ws, st) in w.stages.iter().zip(&mut state.stages) {
        h = full_band(tape, cfg, &ws.fb, h, st)?;
        if let (Some(wsb), Some(ssb)) = (&ws.sb, &mut st.sb) {
            h = sub_band(tape, cfg, wsb, h, ssb)?;
        }
    }
    let up = tape.deconv_freq(h, w.output_deconv.w, w.output_deconv.b, 1)?;
    tape.slice_last(up, 1, f)
}

/// Whole-utterance recording from a fresh state.
pub fn forward_offline<T: Scalar>(tape: &mut Tape<T>, cfg: &ModelConfig, w: &ModelWeights<Var>, x: Var) -> Result<Var> {
    let mut st = GraphState::new(tape, cfg);
    forward(tape, cfg, w, x, &mut st)
}

/// Frame-by-frame recording: each frame of `x` goes through [`forward`] on
/// its own and the outputs are concatenated along time.
pub fn forward_stepwise<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    w: &ModelWeights<Var>,
    x: &Tensor<T>,
) -> Result<Var> {
    let (_, tt, _) = x.dims3()?;
    let mut st = GraphState::new(tape, cfg);
    let mut outs = Vec::with_capacity(tt);
    for t in 0..tt {
        let frame = tape.leaf(x.frame(t)?);
        outs.push(forward(tape, cfg, w, frame, &mut st)?);
    }
    tape.concat(&outs, 1)
}
