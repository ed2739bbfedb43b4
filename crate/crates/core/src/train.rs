//! Loss, metric, optimizer and the small overfitting harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::graph::{forward_offline, weight_leaves};
use crate::model::{Network, Weights};
use crate::stft::{offline_istft, offline_stft, StftConfig};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::weights_io::init_random;

/// Magnitude of the value reported for perfect or fully orthogonal estimates.
pub const SI_SDR_CAP_DB: f64 = 100.0;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("estimate has {a} samples, reference {b}")));
    }
    Ok(())
}

fn magnitudes<T: Scalar>(cfg: &StftConfig, x: &[T]) -> Result<Vec<T>> {
    let ri = offline_stft(cfg, x)?;
    let n = ri.len() / 2;
    let (re, im) = ri.data().split_at(n);
    Ok(re.iter().zip(im).map(|(&a, &b)| (a * a + b * b).sqrt()).collect())
}

fn mean_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x - *y).abs().as_f64()).sum::<f64>() / a.len() as f64
}

/// Waveform MAE plus STFT-magnitude MAE, equally weighted.
pub fn wav_mag_loss<T: Scalar>(est: &[T], reference: &[T], cfg: &StftConfig) -> Result<f64> {
    check_len(est.len(), reference.len())?;
    let wav = mean_abs_diff(est, reference);
    let mag = mean_abs_diff(&magnitudes(cfg, est)?, &magnitudes(cfg, reference)?);
    Ok(wav + mag)
}

/// [`wav_mag_loss`] recorded on a tape, differentiable in `est`.
pub fn wav_mag_loss_graph<T: Scalar>(tape: &mut Tape<T>, est: Var, reference: &[T], cfg: &StftConfig) -> Result<Var> {
    check_len(tape.value(est).len(), reference.len())?;
    let r = tape.leaf(Tensor::from_vec(reference.to_vec()));
    let d = tape.sub(est, r)?;
    let d = tape.abs(d)?;
    let wav = tape.mean(d)?;
    let spec = tape.stft(est, cfg)?;
    let mag = tape.magnitude(spec)?;
    let ref_mag = magnitudes(cfg, reference)?;
    let shape = tape.value(mag).shape().to_vec();
    let rm = tape.leaf(Tensor::new(&shape, ref_mag)?);
    let dm = tape.sub(mag, rm)?;
    let dm = tape.abs(dm)?;
    let mag_loss = tape.mean(dm)?;
    tape.add(wav, mag_loss)
}

/// Scale-invariant SDR in dB, clamped to `±SI_SDR_CAP_DB`.
pub fn si_sdr<T: Scalar>(est: &[T], reference: &[T]) -> Result<f64> {
    check_len(est.len(), reference.len())?;
    let s: Vec<f64> = reference.iter().map(|v| v.as_f64()).collect();
    let e: Vec<f64> = est.iter().map(|v| v.as_f64()).collect();
    let ss: f64 = s.iter().map(|v| v * v).sum();
    if ss == 0.0 {
        return Err(Error::Shape("SI-SDR needs a nonzero reference".into()));
    }
    let alpha = e.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / ss;
    let target: f64 = alpha * alpha * ss;
    let noise: f64 = e.iter().zip(&s).map(|(a, b)| (alpha * b - a).powi(2)).sum();
    let db = if noise <= target * 1e-20 {
        SI_SDR_CAP_DB
    } else if target <= noise * 1e-20 {
        -SI_SDR_CAP_DB
    } else {
        10.0 * (target / noise).log10()
    };
    Ok(db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Adaptive-moment gradient descent.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn update(&mut self, params: &mut [&mut Tensor<f64>], grads: &[Tensor<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape("one gradient per parameter required".into()));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// A noisy multi-microphone mixture and its clean reference.
#[derive(Clone, Debug)]
pub struct Clip {
    pub mics: Vec<Vec<f64>>,
    pub clean: Vec<f64>,
}

/// A few random sinusoids plus independent white noise per microphone at
/// `snr_db`.
pub fn synthetic_clip(cfg: &ModelConfig, samples: usize, snr_db: f64, seed: u64) -> Clip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = cfg.stft.sample_rate as f64;
    let tones: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(150.0..3000.0), rng.gen_range(0.1..0.3), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let clean: Vec<f64> = (0..samples)
        .map(|n| tones.iter().map(|(f, a, ph)| a * (std::f64::consts::TAU * f * n as f64 / sr + ph).sin()).sum())
        .collect();
    let power = clean.iter().map(|v| v * v).sum::<f64>() / samples as f64;
    // Uniform on (-b, b) has variance b²/3.
    let bound = (3.0 * power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mics = (0..cfg.mics).map(|_| clean.iter().map(|c| c + rng.gen_range(-bound..bound)).collect()).collect();
    Clip { mics, clean }
}

/// `2P×T×F` network input: RI planes stacked per microphone.
pub fn mixture_spectrum<T: Scalar>(cfg: &ModelConfig, mics: &[Vec<T>]) -> Result<Tensor<T>> {
    if mics.len() != cfg.mics {
        return Err(Error::Shape(format!("{} microphones, model expects {}", mics.len(), cfg.mics)));
    }
    let specs = mics.iter().map(|m| offline_stft(&cfg.stft, m)).collect::<Result<Vec<_>>>()?;
    let (_, tt, f) = specs[0].dims3()?;
    let data = specs.into_iter().flat_map(|s| s.into_data()).collect();
    Tensor::new(&[2 * cfg.mics, tt, f], data)
}

/// Offline enhancement of a clip, returned as samples.
pub fn enhance_offline<T: Scalar>(net: &Network<T>, mics: &[Vec<T>]) -> Result<Vec<T>> {
    let cfg = net.config();
    let x = mixture_spectrum(cfg, mics)?;
    offline_istft(&cfg.stft, &net.forward_offline(&x)?, mics[0].len())
}

/// Loss and gradients of the whole pipeline for one clip.
pub fn loss_and_grads(cfg: &ModelConfig, w: &Weights<f64>, clip: &Clip) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut tape = Tape::new();
    let wv = weight_leaves(&mut tape, w);
    let x = tape.leaf(mixture_spectrum(cfg, &clip.mics)?);
    let y = forward_offline(&mut tape, cfg, &wv, x)?;
    let est = tape.istft(y, &cfg.stft, clip.clean.len())?;
    let loss = wav_mag_loss_graph(&mut tape, est, &clip.clean, &cfg.stft)?;
    let grads = tape.backward(loss)?;
    let g = wv.values().into_iter().map(|v| grads.get_or_zeros(*v, tape.value(*v).shape())).collect();
    Ok((tape.value(loss).data()[0], g))
}

/// Outcome of [`overfit_toy`].
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub config: ModelConfig,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    /// Loss before each update.
    pub losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub si_sdr_mixture: f64,
    pub si_sdr_initial: f64,
    pub si_sdr_final: f64,
    pub weights: Weights<f64>,
}

impl TrainRun {
    pub fn loss_reduction(&self) -> f64 {
        1.0 - self.final_loss / self.initial_loss
    }

    /// SI-SDR gain of the trained estimate over the unprocessed mixture.
    pub fn si_sdr_improvement(&self) -> f64 {
        self.si_sdr_final - self.si_sdr_mixture
    }

    /// `step,loss` header and one row per optimizer step.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

fn evaluate(cfg: &ModelConfig, w: &Weights<f64>, clip: &Clip) -> Result<(f64, f64)> {
    let net = Network::new(*cfg, w.clone())?;
    let est = enhance_offline(&net, &clip.mics)?;
    Ok((wav_mag_loss(&est, &clip.clean, &cfg.stft)?, si_sdr(&est, &clip.clean)?))
}

/// Fits one clip with Adam at a constant learning rate.
pub fn overfit_toy(cfg: &ModelConfig, clip: &Clip, steps: usize, seed: u64, lr: f64) -> Result<TrainRun> {
    overfit_toy_with(cfg, clip, steps, seed, lr, |_, _| {})
}

/// [`overfit_toy`] with a callback receiving `(step, loss)`.
pub fn overfit_toy_with(
    cfg: &ModelConfig,
    clip: &Clip,
    steps: usize,
    seed: u64,
    lr: f64,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainRun> {
    let mut w = init_random(cfg, seed)?.weights.map(|t| t.cast::<f64>());
    let (initial_loss, si_sdr_initial) = evaluate(cfg, &w, clip)?;
    let mut adam = Adam::new(lr);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grads) = loss_and_grads(cfg, &w, clip)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Diverged { step });
        }
        progress(step, loss);
        losses.push(loss);
        let mut params: Vec<&mut Tensor<f64>> = w.named_mut().into_iter().map(|(_, t)| t).collect();
        adam.update(&mut params, &grads)?;
    }
    let (final_loss, si_sdr_final) = evaluate(cfg, &w, clip)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged { step: steps });
    }
    Ok(TrainRun {
        config: *cfg,
        seed,
        steps,
        lr,
        losses,
        initial_loss,
        final_loss,
        si_sdr_mixture: si_sdr(&clip.mics[0], &clip.clean)?,
        si_sdr_initial,
        si_sdr_final,
        weights: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn si_sdr_caps_and_scale_invariance() {
        let s: Vec<f64> = (0..64).map(|n| (n as f64 * 0.3).sin()).collect();
        assert_eq!(si_sdr(&s, &s).unwrap(), SI_SDR_CAP_DB);
        let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&doubled, &s).unwrap(), SI_SDR_CAP_DB);
        let orth: Vec<f64> = vec![1.0, 0.0, 0.0, 0.0];
        assert_eq!(si_sdr(&orth, &[0.0, 1.0, 0.0, 0.0]).unwrap(), -SI_SDR_CAP_DB);
        assert!(si_sdr(&s, &vec![0.0; 64]).is_err());
    }

    #[test]
    fn loss_is_zero_on_identity() {
        let s: Vec<f64> = (0..500).map(|n| (n as f64 * 0.05).cos()).collect();
        assert_eq!(wav_mag_loss(&s, &s, &StftConfig::default()).unwrap(), 0.0);
        assert!(wav_mag_loss(&s, &s[..499], &StftConfig::default()).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::from_vec(vec![1.0, -1.0]);
        let g = Tensor::from_vec(vec![0.5, -2.0]);
        let mut adam = Adam::new(0.1);
        adam.update(&mut [&mut p], &[g]).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn synthetic_clip_hits_requested_snr() {
        let cfg = ModelConfig::toy();
        let c = synthetic_clip(&cfg, 16_000, 5.0, 4);
        let noise: f64 = c.mics[0].iter().zip(&c.clean).map(|(m, s)| (m - s).powi(2)).sum();
        let sig: f64 = c.clean.iter().map(|s| s * s).sum();
        assert!((10.0 * (sig / noise).log10() - 5.0).abs() < 0.3);
    }
}
