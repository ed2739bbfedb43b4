//! Analytic tape gradients against central finite differences, 64-bit.

mod common;

use common::{grad_check, project, rng, tensor, tiny_config, uniform};
use fsb_core::layers::NormLayout;
use fsb_core::model::graph::{forward_offline, forward_stepwise, weight_leaves};
use fsb_core::reference::max_relative_error;
use fsb_core::train::{mixture_spectrum, wav_mag_loss_graph};
use fsb_core::{init_random, StftConfig, Tape, Tensor};

const TOL: f64 = 1e-5;

fn check(name: &str, inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[fsb_core::Var]) -> fsb_core::Var) {
    let err = grad_check(inputs, build);
    assert!(err < TOL, "{name}: max relative error {err:.3e}");
}

#[test]
fn elementwise_ops() {
    let mut r = rng(1);
    let a = tensor(&mut r, &[2, 3, 4]);
    let b = tensor(&mut r, &[2, 3, 4]);
    check("add", &[a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        project(t, y, 10)
    });
    check("sub", &[a.clone(), b.clone()], |t, v| {
        let y = t.sub(v[0], v[1]).unwrap();
        project(t, y, 11)
    });
    check("mul", &[a.clone(), b.clone()], |t, v| {
        let y = t.mul(v[0], v[1]).unwrap();
        project(t, y, 12)
    });
    check("scale", std::slice::from_ref(&a), |t, v| {
        let y = t.scale(v[0], -1.7).unwrap();
        project(t, y, 13)
    });
    // Keep away from the kink at zero.
    let shifted = a.map(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
    check("abs", &[shifted], |t, v| {
        let y = t.abs(v[0]).unwrap();
        project(t, y, 14)
    });
    check("mean", std::slice::from_ref(&a), |t, v| {
        let m = t.mul(v[0], v[0]).unwrap();
        t.mean(m).unwrap()
    });
    check("sum", &[a], |t, v| {
        let m = t.mul(v[0], v[0]).unwrap();
        t.sum(m).unwrap()
    });
}

#[test]
fn shape_ops() {
    let mut r = rng(2);
    let a = tensor(&mut r, &[2, 3, 4]);
    let b = tensor(&mut r, &[2, 5, 4]);
    check("reshape", std::slice::from_ref(&a), |t, v| {
        let y = t.reshape(v[0], &[6, 4]).unwrap();
        project(t, y, 20)
    });
    check("pad_last", std::slice::from_ref(&a), |t, v| {
        let y = t.pad_last(v[0], 2, 1).unwrap();
        project(t, y, 21)
    });
    check("slice_last", std::slice::from_ref(&a), |t, v| {
        let y = t.slice_last(v[0], 1, 2).unwrap();
        project(t, y, 22)
    });
    for perm in [[0, 2, 1], [1, 0, 2], [2, 1, 0], [1, 2, 0], [2, 0, 1]] {
        check("permute", std::slice::from_ref(&a), |t, v| {
            let y = t.permute(v[0], perm).unwrap();
            project(t, y, 23)
        });
    }
    check("concat", &[a, b], |t, v| {
        let y = t.concat(&[v[0], v[1]], 1).unwrap();
        project(t, y, 24)
    });
}

#[test]
fn conv_and_deconv() {
    let mut r = rng(3);
    let x = tensor(&mut r, &[3, 2, 10]);
    let w = tensor(&mut r, &[4, 3, 4]);
    let b = tensor(&mut r, &[4]);
    check("conv_freq", &[x.clone(), w, b.clone()], |t, v| {
        let y = t.conv_freq(v[0], v[1], v[2], 2).unwrap();
        project(t, y, 30)
    });
    let wd = tensor(&mut r, &[3, 4, 5]);
    check("deconv_freq", &[x, wd, b], |t, v| {
        let y = t.deconv_freq(v[0], v[1], v[2], 3).unwrap();
        project(t, y, 31)
    });
}

#[test]
fn squared_norm_of_conv_wrt_kernel() {
    let mut r = rng(4);
    let x = tensor(&mut r, &[2, 3, 8]);
    let w = tensor(&mut r, &[3, 2, 4]);
    let b = tensor(&mut r, &[3]);
    let err = grad_check(&[x, w, b], |t, v| {
        let y = t.conv_freq(v[0], v[1], v[2], 4).unwrap();
        let sq = t.mul(y, y).unwrap();
        t.sum(sq).unwrap()
    });
    assert!(err < 1e-6, "conv ‖y‖² gradient error {err:.3e}");
}

#[test]
fn prelu_and_linear() {
    let mut r = rng(5);
    let x = tensor(&mut r, &[2, 3, 5]).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let a = Tensor::scalar(0.25);
    check("prelu", &[x.clone(), a], |t, v| {
        let y = t.prelu(v[0], v[1]).unwrap();
        project(t, y, 50)
    });
    let w = tensor(&mut r, &[4, 5]);
    let b = tensor(&mut r, &[4]);
    check("linear", &[x, w, b], |t, v| {
        let y = t.linear(v[0], v[1], v[2]).unwrap();
        project(t, y, 51)
    });
}

#[test]
fn lstm_over_eight_steps() {
    let mut r = rng(6);
    let (n, tt, nin, nh) = (2, 8, 3, 4);
    let inputs = [
        tensor(&mut r, &[n, tt, nin]),
        tensor(&mut r, &[n * nh]),
        tensor(&mut r, &[n * nh]),
        tensor(&mut r, &[4 * nh, nin]),
        tensor(&mut r, &[4 * nh, nh]),
        tensor(&mut r, &[4 * nh]),
        tensor(&mut r, &[4 * nh]),
    ];
    check("lstm", &inputs, |t, v| {
        let y = t.lstm(v[0], v[1], v[2], v[3], v[4], v[5], v[6]).unwrap();
        project(t, y, 60)
    });
}

#[test]
fn causal_norm_in_both_layouts() {
    let mut r = rng(7);
    let x2 = tensor(&mut r, &[5, 6]);
    let (g2, b2) = (tensor(&mut r, &[6]), tensor(&mut r, &[6]));
    check("cgln frames", &[x2, g2, b2], |t, v| {
        let (y, _) = t.cgln(v[0], NormLayout::Frames, v[1], v[2], 1e-5, None, 0).unwrap();
        project(t, y, 70)
    });
    let x3 = tensor(&mut r, &[3, 4, 5]);
    let (g3, b3) = (tensor(&mut r, &[3]), tensor(&mut r, &[3]));
    let prev = Tensor::new(&[2], vec![1.5, 9.0]).unwrap();
    check("cgln channel-time-freq with history", &[x3, g3, b3, prev], |t, v| {
        let (y, last) = t.cgln(v[0], NormLayout::ChannelTimeFreq, v[1], v[2], 1e-5, Some(v[3]), 12).unwrap();
        let a = project(t, y, 71);
        let b = project(t, last, 72);
        t.add(a, b).unwrap()
    });
}

#[test]
fn stft_istft_and_magnitude() {
    let cfg = StftConfig::default();
    let mut r = rng(8);
    let len = 200;
    let x = Tensor::from_vec(uniform(&mut r, len, 1.0));
    check("stft", std::slice::from_ref(&x), |t, v| {
        let y = t.stft(v[0], &cfg).unwrap();
        project(t, y, 80)
    });
    let frames = cfg.num_frames(len);
    let spec = tensor(&mut r, &[2, frames, cfg.freq_bins()]);
    check("istft", std::slice::from_ref(&spec), |t, v| {
        let y = t.istft(v[0], &cfg, len).unwrap();
        project(t, y, 81)
    });
    check("magnitude", &[spec], |t, v| {
        let y = t.magnitude(v[0]).unwrap();
        project(t, y, 82)
    });
}

#[test]
fn wav_mag_loss_wrt_estimate() {
    let cfg = StftConfig::default();
    let mut r = rng(9);
    let len = 256;
    let est = Tensor::from_vec(uniform(&mut r, len, 1.0));
    let reference = uniform(&mut r, len, 1.0);
    check("wav_mag_loss", &[est], |t, v| wav_mag_loss_graph(t, v[0], &reference, &cfg).unwrap());
}

#[test]
fn end_to_end_tiny_model() {
    let cfg = tiny_config();
    let w = init_random(&cfg, 3).unwrap().weights.map(|t| t.cast::<f64>());
    let mut r = rng(10);
    let len = 320;
    let mic = uniform(&mut r, len, 1.0);
    let clean = uniform(&mut r, len, 1.0);
    let x = mixture_spectrum(&cfg, &[mic]).unwrap();
    let leaves: Vec<Tensor<f64>> = w.values().into_iter().cloned().collect();
    let err = grad_check(&leaves, |t, v| {
        let wv = w.with_values(v.to_vec()).unwrap();
        let xv = t.leaf(x.clone());
        let y = forward_offline(t, &cfg, &wv, xv).unwrap();
        let est = t.istft(y, &cfg.stft, len).unwrap();
        wav_mag_loss_graph(t, est, &clean, &cfg.stft).unwrap()
    });
    assert!(err < TOL, "end-to-end max relative error {err:.3e}");
}

#[test]
fn stepwise_and_offline_gradients_agree() {
    let cfg = tiny_config();
    let w = init_random(&cfg, 5).unwrap().weights.map(|t| t.cast::<f64>());
    let mut r = rng(11);
    let len = 640;
    let mic = uniform(&mut r, len, 1.0);
    let clean = uniform(&mut r, len, 1.0);
    let x = mixture_spectrum(&cfg, &[mic]).unwrap();

    let grads_of = |stepwise: bool| {
        let mut t = Tape::new();
        let wv = weight_leaves(&mut t, &w);
        let y = if stepwise {
            forward_stepwise(&mut t, &cfg, &wv, &x).unwrap()
        } else {
            let xv = t.leaf(x.clone());
            forward_offline(&mut t, &cfg, &wv, xv).unwrap()
        };
        let est = t.istft(y, &cfg.stft, len).unwrap();
        let loss = wav_mag_loss_graph(&mut t, est, &clean, &cfg.stft).unwrap();
        let g = t.backward(loss).unwrap();
        wv.values()
            .into_iter()
            .zip(w.values())
            .flat_map(|(v, p)| g.get_or_zeros(*v, p.shape()).into_data())
            .collect::<Vec<f64>>()
    };
    let (a, b) = (grads_of(false), grads_of(true));
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-8, "stepwise vs offline gradient diff {diff:.3e}");
    assert!(max_relative_error(&a, &b, 1e-6) < 1e-8);
}

#[test]
fn replay_matches_recorded_values() {
    let cfg = tiny_config();
    let w = init_random(&cfg, 1).unwrap().weights.map(|t| t.cast::<f64>());
    let x = mixture_spectrum(&cfg, &[uniform(&mut rng(12), 300, 1.0)]).unwrap();
    let mut t = Tape::new();
    let wv = weight_leaves(&mut t, &w);
    let xv = t.leaf(x);
    forward_offline(&mut t, &cfg, &wv, xv).unwrap();
    t.replay().unwrap();
}
