//! Runtime invariant checks behind `fsb selfcheck`.

use fsb_core::layers::deconv_freq;
use fsb_core::model::graph::{forward_offline, weight_leaves};
use fsb_core::reference::{central_difference, deconv_zero_interleave, max_relative_error, naive_dft, FD_STEPS};
use fsb_core::stft::{stream_passthrough, RealDft};
use fsb_core::train::{mixture_spectrum, wav_mag_loss, wav_mag_loss_graph};
use fsb_core::{init_random, ModelConfig, Network, StftConfig, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Outcome {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.value.is_finite() && self.value <= self.limit
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn stft(seed: u64) -> anyhow::Result<Vec<Outcome>> {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let warm = cfg.ows;

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x = noise(&mut rng, 16_000);
        let y = stream_passthrough(&cfg, &x)?;
        let err: Vec<f64> = x[warm..].iter().zip(&y[warm..]).map(|(a, b)| a - b).collect();
        worst = worst.max(rms(&err) / rms(&x[warm..]));
    }

    let mut changed_early = 0.0f64;
    let x = noise(&mut rng, 4_000);
    let base = stream_passthrough(&cfg, &x)?;
    for _ in 0..10 {
        let n = rng.gen_range(cfg.ows..x.len());
        let mut xp = x.clone();
        xp[n] += 1.0;
        let yp = stream_passthrough(&cfg, &xp)?;
        let early = base[..=n - cfg.ows].iter().zip(&yp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        changed_early = changed_early.max(early);
    }

    let frame = noise(&mut rng, cfg.dft_size);
    let (re_ref, im_ref) = naive_dft(&frame);
    let mut dft = RealDft::<f64>::new(cfg.dft_size);
    let (mut re, mut im) = (vec![0.0; cfg.freq_bins()], vec![0.0; cfg.freq_bins()]);
    dft.forward(&frame, &mut re, &mut im);
    let dft_err = re.iter().zip(&re_ref).chain(im.iter().zip(&im_ref)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    Ok(vec![
        Outcome { name: "stft.reconstruction_rel_rms", value: worst, limit: 1e-6 },
        Outcome { name: "stft.causality_max_change", value: changed_early, limit: 0.0 },
        Outcome { name: "stft.dft_vs_naive", value: dft_err, limit: 1e-10 },
    ])
}

pub fn deconv(seed: u64) -> anyhow::Result<Vec<Outcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (cin, cout, k) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..9));
        let (stride, fin, tt) = (rng.gen_range(1..=k), rng.gen_range(1..12), rng.gen_range(1..4));
        let x = Tensor::new(&[cin, tt, fin], noise(&mut rng, cin * tt * fin))?;
        let w = Tensor::new(&[cin, cout, k], noise(&mut rng, cin * cout * k))?;
        let b = Tensor::new(&[cout], noise(&mut rng, cout))?;
        let (want, _) = deconv_zero_interleave(&x, &w, &b, stride)?;
        worst = worst.max(deconv_freq(&x, &w, &b, stride)?.max_abs_diff(&want));
    }
    let x = Tensor::<f64>::zeros(&[8, 1, 32]);
    let w = Tensor::zeros(&[8, 32, 8]);
    let b = Tensor::zeros(&[32]);
    let (_, custom) = fsb_core::tensor::macs::measure(|| deconv_freq(&x, &w, &b, 4));
    let (_, naive) = deconv_zero_interleave(&x, &w, &b, 4)?;
    let ratio = custom as f64 / naive as f64;
    Ok(vec![
        Outcome { name: "deconv.max_abs_diff", value: worst, limit: 1e-6 },
        Outcome { name: "deconv.mac_ratio_minus_inv_stride", value: (ratio - 0.25).abs() / 0.25, limit: 0.1 },
    ])
}

pub fn stream(seed: u64) -> anyhow::Result<Vec<Outcome>> {
    let cfg = ModelConfig::default();
    let net = Network::new(cfg, init_random(&cfg, seed)?.weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mics: Vec<Vec<f32>> = (0..cfg.mics).map(|_| (0..4_000).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
    let x = mixture_spectrum(&cfg, &mics)?;
    let offline = net.forward_offline(&x)?;
    let mut st = net.new_state();
    let mut worst = 0.0f64;
    let (c, tt, f) = x.dims3()?;
    for t in 0..tt {
        let y = net.step_online(&x.frame(t)?.reshape(&[c, f])?, &mut st)?;
        worst = worst.max(y.max_abs_diff(&offline.frame(t)?.reshape(&[2, f])?));
    }
    Ok(vec![Outcome { name: "stream.step_vs_offline_max_abs", value: worst, limit: 1e-5 }])
}

pub fn grad(seed: u64) -> anyhow::Result<Vec<Outcome>> {
    let cfg = ModelConfig::tiny();
    let w = init_random(&cfg, seed)?.weights.map(|t| t.cast::<f64>());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 480;
    let mic = noise(&mut rng, len);
    let clean = noise(&mut rng, len);
    let x = mixture_spectrum(&cfg, std::slice::from_ref(&mic))?;

    let mut tape = Tape::new();
    let wv = weight_leaves(&mut tape, &w);
    let xv = tape.leaf(x.clone());
    let y = forward_offline(&mut tape, &cfg, &wv, xv)?;
    let est = tape.istft(y, &cfg.stft, len)?;
    let loss = wav_mag_loss_graph(&mut tape, est, &clean, &cfg.stft)?;
    let grads = tape.backward(loss)?;

    let names = w.named();
    let mut worst = 0.0f64;
    for _ in 0..12 {
        let k = rng.gen_range(0..names.len());
        let i = rng.gen_range(0..names[k].1.len());
        let analytic = grads.get(*wv.values()[k]).map_or(0.0, |g| g.data()[i]);
        let loss_at = |v: &[f64]| {
            let mut wp = w.clone();
            wp.named_mut()[k].1.data_mut()[i] = v[0];
            let net = Network::new(cfg, wp).expect("same shapes");
            let out = net.forward_offline(&x).expect("forward");
            let est = fsb_core::stft::offline_istft(&cfg.stft, &out, len).expect("istft");
            wav_mag_loss(&est, &clean, &cfg.stft).expect("loss")
        };
        // The best step differs per coordinate; a wrong gradient fails at all of them.
        let err = FD_STEPS
            .iter()
            .map(|&h| {
                let numeric = central_difference(&[names[k].1.data()[i]], h, loss_at)[0];
                max_relative_error(&[analytic], &[numeric], 1e-4)
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(err);
    }
    Ok(vec![Outcome { name: "grad.end_to_end_max_rel_err", value: worst, limit: 1e-5 }])
}
