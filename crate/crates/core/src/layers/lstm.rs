//! Unidirectional LSTM.
//!
//! Gate rows are stacked in the order input, forget, candidate, output, each
//! block `H` rows tall. Both an input-side and a hidden-side bias are kept.

use crate::error::{shape_err, Result};
use crate::tensor::{gemv, macs, sigmoid, Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a, T> {
    /// `4H×In`
    pub wi: &'a Tensor<T>,
    /// `4H×H`
    pub wh: &'a Tensor<T>,
    pub bi: &'a Tensor<T>,
    pub bh: &'a Tensor<T>,
}

impl<'a, T: Scalar> LstmWeights<'a, T> {
    pub fn hidden(&self) -> usize {
        self.wh.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.wi.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (r, h) = self.wh.dims2()?;
        let (ri, _) = self.wi.dims2()?;
        if r != 4 * h || ri != 4 * h || self.bi.len() != 4 * h || self.bh.len() != 4 * h {
            return shape_err(format!(
                "inconsistent LSTM weights: wi {:?}, wh {:?}, bi {}, bh {}",
                self.wi.shape(),
                self.wh.shape(),
                self.bi.len(),
                self.bh.len()
            ));
        }
        Ok(())
    }

    /// Gate pre-activations `Wi·x + Wh·h + bi + bh`.
    fn preact(&self, x: &[T], h: &[T], gates: &mut [T]) {
        let n_in = self.input();
        let n_h = self.hidden();
        let (wi, wh, bi, bh) = (self.wi.data(), self.wh.data(), self.bi.data(), self.bh.data());
        let mut rec = vec![T::zero(); 4 * n_h];
        gemv(wi, n_in, x, gates);
        gemv(wh, n_h, h, &mut rec);
        for (r, g) in gates.iter_mut().enumerate() {
            *g = (bi[r] + bh[r]) + *g + rec[r];
        }
        macs::add(4 * n_h * (n_in + n_h));
    }
}

/// Gate activations after nonlinearity, laid out `[i | f | g | o]`.
fn activate<T: Scalar>(gates: &mut [T], n_h: usize) {
    for (k, v) in gates.iter_mut().enumerate() {
        *v = if k / n_h == 2 { v.tanh() } else { sigmoid(*v) };
    }
}

/// One step updating `h` and `c` in place. `gates` is scratch of length `4H`.
pub fn lstm_step_into<T: Scalar>(x: &[T], h: &mut [T], c: &mut [T], w: &LstmWeights<T>, gates: &mut [T]) {
    let n_h = w.hidden();
    w.preact(x, h, gates);
    activate(gates, n_h);
    for k in 0..n_h {
        let (i, f, g, o) = (gates[k], gates[n_h + k], gates[2 * n_h + k], gates[3 * n_h + k]);
        c[k] = f * c[k] + i * g;
        h[k] = o * c[k].tanh();
    }
}

/// `(h', c')` for one step from `(x, h, c)`.
pub fn lstm_step<T: Scalar>(x: &[T], h: &[T], c: &[T], w: &LstmWeights<T>) -> Result<(Vec<T>, Vec<T>)> {
    w.validate()?;
    let n_h = w.hidden();
    if x.len() != w.input() || h.len() != n_h || c.len() != n_h {
        return shape_err(format!(
            "LSTM step got x={}, h={}, c={} for input {} hidden {}",
            x.len(),
            h.len(),
            c.len(),
            w.input(),
            n_h
        ));
    }
    let (mut h2, mut c2) = (h.to_vec(), c.to_vec());
    let mut gates = vec![T::zero(); 4 * n_h];
    lstm_step_into(x, &mut h2, &mut c2, w, &mut gates);
    Ok((h2, c2))
}

/// Runs `N` independent sequences sharing one set of weights.
///
/// `x` is `N×T×In`, `h0`/`c0` hold `N·H` values. The result is `N×T×2H` with
/// `[h_t | c_t]` along the last axis, so the final state of a chunk can seed
/// the next chunk.
pub fn lstm_sequence<T: Scalar>(
    x: &Tensor<T>,
    h0: &Tensor<T>,
    c0: &Tensor<T>,
    w: &LstmWeights<T>,
) -> Result<Tensor<T>> {
    w.validate()?;
    let (n, tt, n_in) = x.dims3()?;
    let n_h = w.hidden();
    if n_in != w.input() || h0.len() != n * n_h || c0.len() != n * n_h {
        return shape_err(format!(
            "LSTM sequence {:?} with states {}/{} for input {} hidden {}",
            x.shape(),
            h0.len(),
            c0.len(),
            w.input(),
            n_h
        ));
    }
    let mut out = vec![T::zero(); n * tt * 2 * n_h];
    let mut gates = vec![T::zero(); 4 * n_h];
    for s in 0..n {
        let mut h = h0.data()[s * n_h..(s + 1) * n_h].to_vec();
        let mut c = c0.data()[s * n_h..(s + 1) * n_h].to_vec();
        for t in 0..tt {
            let xt = &x.data()[(s * tt + t) * n_in..(s * tt + t + 1) * n_in];
            lstm_step_into(xt, &mut h, &mut c, w, &mut gates);
            let o = (s * tt + t) * 2 * n_h;
            out[o..o + n_h].copy_from_slice(&h);
            out[o + n_h..o + 2 * n_h].copy_from_slice(&c);
        }
    }
    Tensor::new(&[n, tt, 2 * n_h], out)
}

/// Gradients of [`lstm_sequence`] by backpropagation through time.
pub struct LstmGrads<T> {
    pub x: Tensor<T>,
    pub h0: Tensor<T>,
    pub c0: Tensor<T>,
    pub wi: Tensor<T>,
    pub wh: Tensor<T>,
    pub bi: Tensor<T>,
    pub bh: Tensor<T>,
}

/// Backward pass for [`lstm_sequence`]. `out` is the forward result and `gout`
/// the gradient with respect to it (both `N×T×2H`). Gate activations are
/// recomputed from the stored states.
pub fn lstm_sequence_backward<T: Scalar>(
    x: &Tensor<T>,
    h0: &Tensor<T>,
    c0: &Tensor<T>,
    w: &LstmWeights<T>,
    out: &Tensor<T>,
    gout: &Tensor<T>,
) -> Result<LstmGrads<T>> {
    let (n, tt, n_in) = x.dims3()?;
    let n_h = w.hidden();
    let (wi, wh) = (w.wi.data(), w.wh.data());
    let mut gx = vec![T::zero(); x.len()];
    let mut gh0 = vec![T::zero(); n * n_h];
    let mut gc0 = vec![T::zero(); n * n_h];
    let mut gwi = vec![T::zero(); wi.len()];
    let mut gwh = vec![T::zero(); wh.len()];
    let mut gb = vec![T::zero(); 4 * n_h];
    let mut gates = vec![T::zero(); 4 * n_h];
    let mut dpre = vec![T::zero(); 4 * n_h];
    let od = out.data();
    let gd = gout.data();
    let one = T::one();

    for s in 0..n {
        let mut dh_next = vec![T::zero(); n_h];
        let mut dc_next = vec![T::zero(); n_h];
        for t in (0..tt).rev() {
            let xt = &x.data()[(s * tt + t) * n_in..(s * tt + t + 1) * n_in];
            let (h_prev, c_prev): (&[T], &[T]) = if t == 0 {
                (&h0.data()[s * n_h..(s + 1) * n_h], &c0.data()[s * n_h..(s + 1) * n_h])
            } else {
                let o = (s * tt + t - 1) * 2 * n_h;
                (&od[o..o + n_h], &od[o + n_h..o + 2 * n_h])
            };
            let o = (s * tt + t) * 2 * n_h;
            let c_t = &od[o + n_h..o + 2 * n_h];
            w.preact(xt, h_prev, &mut gates);
            activate(&mut gates, n_h);
            for k in 0..n_h {
                let (i, f, g, og) = (gates[k], gates[n_h + k], gates[2 * n_h + k], gates[3 * n_h + k]);
                let tc = c_t[k].tanh();
                let dh = gd[o + k] + dh_next[k];
                let dc = gd[o + n_h + k] + dc_next[k] + dh * og * (one - tc * tc);
                dpre[k] = dc * g * i * (one - i);
                dpre[n_h + k] = dc * c_prev[k] * f * (one - f);
                dpre[2 * n_h + k] = dc * i * (one - g * g);
                dpre[3 * n_h + k] = dh * tc * og * (one - og);
                dc_next[k] = dc * f;
            }
            dh_next.iter_mut().for_each(|v| *v = T::zero());
            let gxt = &mut gx[(s * tt + t) * n_in..(s * tt + t + 1) * n_in];
            for (r, &d) in dpre.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                gb[r] = gb[r] + d;
                let wir = &wi[r * n_in..(r + 1) * n_in];
                let whr = &wh[r * n_h..(r + 1) * n_h];
                for (a, (gw, xv)) in gwi[r * n_in..(r + 1) * n_in].iter_mut().zip(xt).enumerate() {
                    *gw = *gw + d * *xv;
                    gxt[a] = gxt[a] + d * wir[a];
                }
                for (a, (gw, hv)) in gwh[r * n_h..(r + 1) * n_h].iter_mut().zip(h_prev).enumerate() {
                    *gw = *gw + d * *hv;
                    dh_next[a] = dh_next[a] + d * whr[a];
                }
            }
        }
        gh0[s * n_h..(s + 1) * n_h].copy_from_slice(&dh_next);
        gc0[s * n_h..(s + 1) * n_h].copy_from_slice(&dc_next);
    }
    Ok(LstmGrads {
        x: Tensor::new(x.shape(), gx)?,
        h0: Tensor::new(h0.shape(), gh0)?,
        c0: Tensor::new(c0.shape(), gc0)?,
        wi: Tensor::new(w.wi.shape(), gwi)?,
        wh: Tensor::new(w.wh.shape(), gwh)?,
        bi: Tensor::from_vec(gb.clone()),
        bh: Tensor::from_vec(gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros(h: usize, n_in: usize) -> [Tensor<f64>; 4] {
        [Tensor::zeros(&[4 * h, n_in]), Tensor::zeros(&[4 * h, h]), Tensor::zeros(&[4 * h]), Tensor::zeros(&[4 * h])]
    }

    #[test]
    fn zero_weights_zero_state_stay_zero() {
        let [wi, wh, bi, bh] = zeros(3, 2);
        let w = LstmWeights { wi: &wi, wh: &wh, bi: &bi, bh: &bh };
        let (h, c) = lstm_step(&[1.0, -4.0], &[0.0; 3], &[0.0; 3], &w).unwrap();
        assert!(h.iter().chain(&c).all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_single_unit() {
        // i = f = o = σ(0) = 0.5, g = tanh(0) = 0, c = 1
        let [wi, wh, bi, bh] = zeros(1, 1);
        let w = LstmWeights { wi: &wi, wh: &wh, bi: &bi, bh: &bh };
        let (h, c) = lstm_step(&[0.7], &[0.3], &[1.0], &w).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-15);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.2311).abs() < 1e-4);
    }

    #[test]
    fn sequence_equals_repeated_steps() {
        let (h_n, n_in, tt) = (3, 2, 5);
        let gen = |n: usize, s: f64| (0..n).map(|k| ((k as f64 + s) * 0.731).sin() * 0.5).collect::<Vec<_>>();
        let wi = Tensor::new(&[4 * h_n, n_in], gen(4 * h_n * n_in, 1.0)).unwrap();
        let wh = Tensor::new(&[4 * h_n, h_n], gen(4 * h_n * h_n, 2.0)).unwrap();
        let bi = Tensor::from_vec(gen(4 * h_n, 3.0));
        let bh = Tensor::from_vec(gen(4 * h_n, 4.0));
        let w = LstmWeights { wi: &wi, wh: &wh, bi: &bi, bh: &bh };
        let x = Tensor::new(&[1, tt, n_in], gen(tt * n_in, 5.0)).unwrap();
        let out = lstm_sequence(&x, &Tensor::zeros(&[h_n]), &Tensor::zeros(&[h_n]), &w).unwrap();
        let (mut h, mut c) = (vec![0.0; h_n], vec![0.0; h_n]);
        for t in 0..tt {
            (h, c) = lstm_step(&x.data()[t * n_in..(t + 1) * n_in], &h, &c, &w).unwrap();
            assert_eq!(&out.data()[t * 2 * h_n..t * 2 * h_n + h_n], &h[..]);
            assert_eq!(&out.data()[t * 2 * h_n + h_n..(t + 1) * 2 * h_n], &c[..]);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let [wi, wh, bi, bh] = zeros(2, 3);
        let w = LstmWeights { wi: &wi, wh: &wh, bi: &bi, bh: &bh };
        assert!(lstm_step(&[0.0; 2], &[0.0; 2], &[0.0; 2], &w).is_err());
    }
}
