mod common;

use common::{rng, tiny_config, uniform};
use fsb_core::train::{overfit_toy, si_sdr, synthetic_clip, wav_mag_loss, Adam, SI_SDR_CAP_DB};
use fsb_core::{ModelConfig, StftConfig, Tensor};
use proptest::prelude::*;

#[test]
fn si_sdr_reference_values() {
    let s = uniform(&mut rng(1), 1_000, 1.0);
    assert_eq!(si_sdr(&s, &s).unwrap(), SI_SDR_CAP_DB);
    // Equal-energy orthogonal noise gives 0 dB.
    let n: Vec<f64> = s.iter().enumerate().map(|(i, _)| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let dot: f64 = s.iter().zip(&n).map(|(a, b)| a * b).sum();
    let ss: f64 = s.iter().map(|v| v * v).sum();
    let orth: Vec<f64> = n.iter().zip(&s).map(|(a, b)| a - dot / ss * b).collect();
    let on: f64 = orth.iter().map(|v| v * v).sum();
    let mix: Vec<f64> = s.iter().zip(&orth).map(|(a, b)| a + b * (ss / on).sqrt()).collect();
    assert!(si_sdr(&mix, &s).unwrap().abs() < 1e-9);
    assert!(si_sdr(&s, &vec![0.0; s.len()]).is_err());
    assert!(si_sdr(&s[..10], &s).is_err());
}

#[test]
fn loss_is_zero_only_at_the_reference() {
    let cfg = StftConfig::default();
    let s = uniform(&mut rng(2), 500, 1.0);
    assert_eq!(wav_mag_loss(&s, &s, &cfg).unwrap(), 0.0);
    let t: Vec<f64> = s.iter().map(|v| v * 0.9).collect();
    assert!(wav_mag_loss(&t, &s, &cfg).unwrap() > 0.0);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut x = Tensor::new(&[3], vec![3.0, -2.0, 0.5]).unwrap();
    let mut adam = Adam::new(0.05);
    for _ in 0..2_000 {
        let g = x.map(|v| 2.0 * v);
        adam.update(&mut [&mut x], &[g]).unwrap();
    }
    assert!(x.data().iter().all(|v| v.abs() < 1e-3), "{:?}", x.data());
    assert!(adam.update(&mut [&mut x], &[Tensor::zeros(&[2])]).is_err());
}

#[test]
fn synthetic_clip_is_seeded() {
    let cfg = ModelConfig::toy();
    let a = synthetic_clip(&cfg, 4_000, 5.0, 3);
    let b = synthetic_clip(&cfg, 4_000, 5.0, 3);
    assert_eq!(a.clean, b.clean);
    assert_eq!(a.mics, b.mics);
    assert_ne!(a.clean, synthetic_clip(&cfg, 4_000, 5.0, 4).clean);
    assert_eq!(a.mics.len(), cfg.mics);
}

#[test]
fn short_run_reduces_loss_and_is_deterministic() {
    let cfg = tiny_config();
    let clip = synthetic_clip(&cfg, 1_600, 0.0, 5);
    let a = overfit_toy(&cfg, &clip, 40, 1, 3e-3).unwrap();
    assert_eq!(a.losses.len(), 40);
    assert!(a.losses.iter().all(|l| l.is_finite()));
    assert!(a.final_loss < a.initial_loss);
    assert_eq!(a.trace_csv().lines().count(), 41);
    assert!(a.trace_csv().starts_with("step,loss\n0,"));
    let b = overfit_toy(&cfg, &clip, 40, 1, 3e-3).unwrap();
    assert_eq!(a.losses, b.losses);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn si_sdr_is_scale_invariant(seed in 0u64..1_000, c in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let s = uniform(&mut r, 400, 1.0);
        let e: Vec<f64> = s.iter().zip(uniform(&mut r, 400, 0.5)).map(|(a, b)| a + b).collect();
        let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
        prop_assert!((si_sdr(&e, &s).unwrap() - si_sdr(&scaled, &s).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn loss_is_nonnegative_and_symmetric(seed in 0u64..1_000) {
        let cfg = StftConfig::default();
        let mut r = rng(seed);
        let a = uniform(&mut r, 300, 1.0);
        let b = uniform(&mut r, 300, 1.0);
        let ab = wav_mag_loss(&a, &b, &cfg).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - wav_mag_loss(&b, &a, &cfg).unwrap()).abs() < 1e-12);
    }
}
