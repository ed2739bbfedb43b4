//! Slow, independent implementations used as oracles by the self-checks and
//! the test suites.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Direct `O(N²)` DFT of a real sequence, bins `0..=N/2`.
pub fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let bins = n / 2 + 1;
    let mut re = vec![0.0; bins];
    let mut im = vec![0.0; bins];
    for k in 0..bins {
        for (j, &v) in x.iter().enumerate() {
            let ang = -std::f64::consts::TAU * ((k * j) % n) as f64 / n as f64;
            re[k] += v * ang.cos();
            im[k] += v * ang.sin();
        }
    }
    (re, im)
}

/// Transposed convolution as a zero-interleaved, fully padded ordinary
/// convolution with a flipped kernel. `x` is `Cin×T×Fin`, `w` is
/// `Cin×Cout×I`. Returns the output and the MACs this form performs.
pub fn deconv_zero_interleave(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
) -> Result<(Tensor<f64>, usize)> {
    let (cin, tt, fin) = x.dims3()?;
    let (wcin, cout, k) = w.dims3()?;
    if wcin != cin || b.len() != cout || stride == 0 {
        return Err(Error::Shape("zero-interleave deconv: mismatched operands".into()));
    }
    let up_len = (fin - 1) * stride + 1;
    let padded = up_len + 2 * (k - 1);
    let fout = padded - k + 1;
    let mut z = vec![0.0; cin * tt * padded];
    for c in 0..cin {
        for t in 0..tt {
            for f in 0..fin {
                z[(c * tt + t) * padded + k - 1 + f * stride] = x.at3(c, t, f);
            }
        }
    }
    let mut out = vec![0.0; cout * tt * fout];
    let mut macs = 0;
    for o in 0..cout {
        for t in 0..tt {
            for p in 0..fout {
                let mut acc = b.data()[o];
                for c in 0..cin {
                    for j in 0..k {
                        acc += z[(c * tt + t) * padded + p + j] * w.at3(c, o, k - 1 - j);
                        macs += 1;
                    }
                }
                out[(o * tt + t) * fout + p] = acc;
            }
        }
    }
    Ok((Tensor::new(&[cout, tt, fout], out)?, macs))
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over the two slices.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

/// Finite-difference steps tried in order by [`tape_gradient_error`].
/// Truncation error dominates for large steps and cancellation for small
/// ones, and the balance point varies by coordinate, so each coordinate keeps
/// its best step. A wrong analytic gradient disagrees at every step.
pub const FD_STEPS: [f64; 3] = [1e-5, 1e-4, 1e-6];

/// Worst relative error (floor `1e-4`) between tape gradients of the scalar
/// built by `build` and central differences, over the `(input, index)`
/// coordinates in `coords`, or over every coordinate when `coords` is `None`.
pub fn tape_gradient_error(
    inputs: &[Tensor<f64>],
    coords: Option<&[(usize, usize)]>,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &vars);
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor<f64>> = inputs.iter().zip(&vars).map(|(t, v)| grads.get_or_zeros(*v, t.shape())).collect();

    let eval = |k: usize, p: &[f64]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(j, t)| {
                tape.leaf(if j == k { Tensor::new(t.shape(), p.to_vec()).expect("same shape") } else { t.clone() })
            })
            .collect();
        let root = build(&mut tape, &vars);
        tape.value(root).data()[0]
    };

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs.iter().enumerate().flat_map(|(k, t)| (0..t.len()).map(move |i| (k, i))).collect();
            &all
        }
    };
    let mut worst = 0.0f64;
    for &(k, i) in coords {
        let mut x = inputs[k].data().to_vec();
        let a = analytic[k].data()[i];
        let mut best = f64::INFINITY;
        for h in FD_STEPS {
            let orig = x[i];
            let n = central_difference(&[orig], h, |v| {
                x[i] = v[0];
                let f = eval(k, &x);
                x[i] = orig;
                f
            })[0];
            best = best.min(max_relative_error(&[a], &[n], 1e-4));
            if best < 1e-6 {
                break;
            }
        }
        worst = worst.max(best);
    }
    Ok(worst)
}

/// cGLN recomputed from scratch for every frame of a `T×A` input.
pub fn cgln_frames_naive(x: &Tensor<f64>, gamma: &[f64], beta: &[f64], eps: f64) -> Result<Tensor<f64>> {
    let (tt, a) = x.dims2()?;
    let mut y = vec![0.0; tt * a];
    for t in 0..tt {
        let seen = &x.data()[..(t + 1) * a];
        let n = seen.len() as f64;
        let mean = seen.iter().sum::<f64>() / n;
        let var = seen.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for k in 0..a {
            y[t * a + k] = gamma[k] * (x.data()[t * a + k] - mean) / (var + eps).sqrt() + beta[k];
        }
    }
    Tensor::new(&[tt, a], y)
}
