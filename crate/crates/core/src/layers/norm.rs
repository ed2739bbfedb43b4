//! Causal global layer normalization (cGLN).
//!
//! Frame `t` is normalized with the mean and variance of every value in frames
//! `0..=t`. The statistics are carried as a running sum, running sum of
//! squares and element count, so frame-by-frame evaluation and whole-sequence
//! evaluation perform the same arithmetic in the same order.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

pub const CGLN_EPS: f64 = 1e-5;

/// Which axis is time and which axis the affine vectors run along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormLayout {
    /// `T×A`, one scale/shift entry per feature.
    Frames,
    /// `C×T×F`, one scale/shift entry per channel, statistics pooled over
    /// channel and frequency.
    ChannelTimeFreq,
}

impl NormLayout {
    /// `(frames, values per frame, affine length)` for a tensor in this layout.
    pub fn geometry<T: Scalar>(self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        match self {
            NormLayout::Frames => {
                let (t, a) = x.dims2()?;
                Ok((t, a, a))
            }
            NormLayout::ChannelTimeFreq => {
                let (c, t, f) = x.dims3()?;
                Ok((t, c * f, c))
            }
        }
    }

    /// Flat index and affine index of the `k`-th value in frame `t`.
    #[inline]
    fn index(self, shape: &[usize], t: usize, k: usize) -> (usize, usize) {
        match self {
            NormLayout::Frames => (t * shape[1] + k, k),
            NormLayout::ChannelTimeFreq => {
                let (tt, f) = (shape[1], shape[2]);
                let (c, fi) = (k / f, k % f);
                ((c * tt + t) * f + fi, c)
            }
        }
    }
}

/// Running statistics of one cGLN instance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CglnStats<T> {
    pub sum: T,
    pub sum_sq: T,
    pub count: usize,
}

impl<T: Scalar> CglnStats<T> {
    pub fn new() -> Self {
        Self { sum: T::zero(), sum_sq: T::zero(), count: 0 }
    }

    /// Mean and (non-negative) variance of everything seen so far.
    pub fn mean_var(&self) -> (T, T) {
        mean_var(self.sum, self.sum_sq, self.count)
    }
}

#[inline]
fn mean_var<T: Scalar>(sum: T, sum_sq: T, count: usize) -> (T, T) {
    let n = T::lit(count as f64);
    let mean = sum / n;
    let var = sum_sq / n - mean * mean;
    (mean, var.max(T::zero()))
}

#[inline]
fn frame_sums<T: Scalar>(vals: impl Iterator<Item = T>) -> (T, T) {
    vals.fold((T::zero(), T::zero()), |(s, q), v| (s + v, q + v * v))
}

fn check_affine<T: Scalar>(gamma: &Tensor<T>, beta: &Tensor<T>, n: usize) -> Result<()> {
    if gamma.len() != n || beta.len() != n {
        return shape_err(format!("cGLN affine vectors have {}/{} entries, expected {}", gamma.len(), beta.len(), n));
    }
    Ok(())
}

/// Normalizes every frame of `x`, continuing from `stats` and updating it.
pub fn cgln<T: Scalar>(
    x: &Tensor<T>,
    layout: NormLayout,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
    stats: &mut CglnStats<T>,
) -> Result<Tensor<T>> {
    let (tt, per, naff) = layout.geometry(x)?;
    check_affine(gamma, beta, naff)?;
    let shape = x.shape().to_vec();
    let xd = x.data();
    let (g, b) = (gamma.data(), beta.data());
    let mut y = vec![T::zero(); x.len()];
    for t in 0..tt {
        let (s1, s2) = frame_sums((0..per).map(|k| xd[layout.index(&shape, t, k).0]));
        stats.sum = stats.sum + s1;
        stats.sum_sq = stats.sum_sq + s2;
        stats.count += per;
        let (mean, var) = stats.mean_var();
        let r = T::one() / (var + eps).sqrt();
        for k in 0..per {
            let (i, a) = layout.index(&shape, t, k);
            y[i] = g[a] * ((xd[i] - mean) * r) + b[a];
        }
    }
    Tensor::new(&shape, y)
}

/// Offline cGLN over a `T×A` tensor.
pub fn cgln_2d<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    cgln(x, NormLayout::Frames, gamma, beta, eps, &mut CglnStats::new())
}

/// Offline cGLN over a `C×T×F` tensor with per-channel affine vectors.
pub fn cgln_3d<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    cgln(x, NormLayout::ChannelTimeFreq, gamma, beta, eps, &mut CglnStats::new())
}

/// Cumulative `[Σx, Σx²]` per frame, starting from `prev`. Shape `T×2`.
pub fn cum_moments<T: Scalar>(x: &Tensor<T>, layout: NormLayout, prev: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (tt, per, _) = layout.geometry(x)?;
    let (mut s, mut q) = match prev {
        Some(p) if p.len() == 2 => (p.data()[0], p.data()[1]),
        Some(p) => return shape_err(format!("moment state needs 2 values, got {}", p.len())),
        None => (T::zero(), T::zero()),
    };
    let shape = x.shape().to_vec();
    let xd = x.data();
    let mut out = Vec::with_capacity(2 * tt);
    for t in 0..tt {
        let (s1, s2) = frame_sums((0..per).map(|k| xd[layout.index(&shape, t, k).0]));
        s = s + s1;
        q = q + s2;
        out.push(s);
        out.push(q);
    }
    Tensor::new(&[tt, 2], out)
}

/// Gradients of [`cum_moments`] with respect to `x` and `prev`.
pub fn cum_moments_backward<T: Scalar>(
    x: &Tensor<T>,
    layout: NormLayout,
    gm: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (tt, per, _) = layout.geometry(x)?;
    let shape = x.shape().to_vec();
    let xd = x.data();
    let gmd = gm.data();
    let mut gx = vec![T::zero(); x.len()];
    let (mut g1, mut g2) = (T::zero(), T::zero());
    for t in (0..tt).rev() {
        g1 = g1 + gmd[2 * t];
        g2 = g2 + gmd[2 * t + 1];
        for k in 0..per {
            let (i, _) = layout.index(&shape, t, k);
            gx[i] = g1 + T::lit(2.0) * xd[i] * g2;
        }
    }
    Ok((Tensor::new(&shape, gx)?, Tensor::from_vec(vec![g1, g2])))
}

/// Normalization given precomputed cumulative moments (`T×2`); `count0` is
/// the number of values accumulated before the first frame of `x`.
pub fn cgln_apply<T: Scalar>(
    x: &Tensor<T>,
    layout: NormLayout,
    moments: &Tensor<T>,
    count0: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let (tt, per, naff) = layout.geometry(x)?;
    check_affine(gamma, beta, naff)?;
    if moments.len() != 2 * tt {
        return shape_err("moment tensor does not match frame count");
    }
    let shape = x.shape().to_vec();
    let xd = x.data();
    let md = moments.data();
    let (g, b) = (gamma.data(), beta.data());
    let mut y = vec![T::zero(); x.len()];
    for t in 0..tt {
        let (mean, var) = mean_var(md[2 * t], md[2 * t + 1], count0 + (t + 1) * per);
        let r = T::one() / (var + eps).sqrt();
        for k in 0..per {
            let (i, a) = layout.index(&shape, t, k);
            y[i] = g[a] * ((xd[i] - mean) * r) + b[a];
        }
    }
    Tensor::new(&shape, y)
}

pub struct CglnApplyGrads<T> {
    pub x: Tensor<T>,
    pub moments: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

#[allow(clippy::too_many_arguments)]
pub fn cgln_apply_backward<T: Scalar>(
    x: &Tensor<T>,
    layout: NormLayout,
    moments: &Tensor<T>,
    count0: usize,
    gamma: &Tensor<T>,
    eps: T,
    gy: &Tensor<T>,
) -> Result<CglnApplyGrads<T>> {
    let (tt, per, naff) = layout.geometry(x)?;
    let shape = x.shape().to_vec();
    let xd = x.data();
    let md = moments.data();
    let gyd = gy.data();
    let g = gamma.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gm = vec![T::zero(); 2 * tt];
    let mut gg = vec![T::zero(); naff];
    let mut gb = vec![T::zero(); naff];
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    for t in 0..tt {
        let n = T::lit((count0 + (t + 1) * per) as f64);
        let mean = md[2 * t] / n;
        let raw_var = md[2 * t + 1] / n - mean * mean;
        let var = raw_var.max(T::zero());
        let r = T::one() / (var + eps).sqrt();
        let (mut d_mean, mut d_r) = (T::zero(), T::zero());
        for k in 0..per {
            let (i, a) = layout.index(&shape, t, k);
            let centered = xd[i] - mean;
            let gyv = gyd[i];
            gb[a] = gb[a] + gyv;
            gg[a] = gg[a] + gyv * centered * r;
            let gn = gyv * g[a];
            gx[i] = gn * r;
            d_mean = d_mean - gn * r;
            d_r = d_r + gn * centered;
        }
        let d_var = if raw_var > T::zero() { d_r * (-half) * r * r * r } else { T::zero() };
        d_mean = d_mean - two * mean * d_var;
        gm[2 * t] = d_mean / n;
        gm[2 * t + 1] = d_var / n;
    }
    Ok(CglnApplyGrads {
        x: Tensor::new(&shape, gx)?,
        moments: Tensor::new(&[tt, 2], gm)?,
        gamma: Tensor::from_vec(gg),
        beta: Tensor::from_vec(gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_statistics_by_hand() {
        let x = Tensor::new(&[2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let y = cgln_2d(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 1e-12).unwrap();
        // frame 1: μ=2, σ²=1; frame 2: μ=4, σ²=5
        let expect = [-1.0, 1.0, 1.0 / 5f64.sqrt(), 3.0 / 5f64.sqrt()];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!((y.data()[2] - 0.4472).abs() < 1e-4);
        assert!((y.data()[3] - 1.3416).abs() < 1e-4);
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::full(&[4, 3], 2.5f64);
        let y = cgln_2d(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), CGLN_EPS).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn zero_gain_yields_shift() {
        let x = Tensor::new(&[2, 3, 2], (0..12).map(|v| (v as f64).sin()).collect()).unwrap();
        let beta = Tensor::from_vec(vec![0.1, -0.2]);
        let y = cgln_3d(&x, &Tensor::zeros(&[2]), &beta, CGLN_EPS).unwrap();
        for c in 0..2 {
            assert!(y.data()[c * 6..(c + 1) * 6].iter().all(|&v| v == beta.data()[c]));
        }
    }

    #[test]
    fn single_bin_3d_matches_2d() {
        let (c, tt) = (3, 4);
        let vals: Vec<f64> = (0..c * tt).map(|v| (v as f64 * 1.3).cos()).collect();
        let x3 = Tensor::new(&[c, tt, 1], vals.clone()).unwrap();
        let mut rows = vec![0.0; c * tt];
        for ch in 0..c {
            for t in 0..tt {
                rows[t * c + ch] = vals[ch * tt + t];
            }
        }
        let x2 = Tensor::new(&[tt, c], rows).unwrap();
        let gamma = Tensor::from_vec(vec![0.5, 1.0, 2.0]);
        let beta = Tensor::from_vec(vec![0.0, 0.1, -0.3]);
        let y3 = cgln_3d(&x3, &gamma, &beta, CGLN_EPS).unwrap();
        let y2 = cgln_2d(&x2, &gamma, &beta, CGLN_EPS).unwrap();
        for ch in 0..c {
            for t in 0..tt {
                assert!((y3.data()[ch * tt + t] - y2.data()[t * c + ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moments_route_matches_running_stats() {
        let x = Tensor::new(&[3, 4, 2], (0..24).map(|v| ((v * 7 % 11) as f64) * 0.3).collect()).unwrap();
        let gamma = Tensor::from_vec(vec![1.5, -0.5, 0.25]);
        let beta = Tensor::from_vec(vec![0.0, 1.0, 2.0]);
        let direct = cgln_3d(&x, &gamma, &beta, CGLN_EPS).unwrap();
        let m = cum_moments(&x, NormLayout::ChannelTimeFreq, None).unwrap();
        let via = cgln_apply(&x, NormLayout::ChannelTimeFreq, &m, 0, &gamma, &beta, CGLN_EPS).unwrap();
        assert_eq!(direct, via);
    }
}
