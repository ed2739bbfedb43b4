//! Frequency-strided convolution and its transpose.
//!
//! Both layers use a kernel of extent one along time, so frame `t` of the
//! output depends on frame `t` of the input only. The transposed convolution
//! is evaluated as a per-position linear map followed by overlap-add along
//! frequency, which skips the multiplications by interleaved zeros that the
//! textbook formulation performs.

use crate::error::{shape_err, Result};
use crate::tensor::{axpy, dot, gemv, macs, Scalar, Tensor};

fn check_bias<T: Scalar>(b: &Tensor<T>, cout: usize) -> Result<()> {
    if b.len() != cout {
        return shape_err(format!("bias has {} entries, expected {}", b.len(), cout));
    }
    Ok(())
}

/// Output length along frequency of [`conv_freq`], or `None` when the input
/// cannot be tiled exactly by the kernel at the given stride.
pub fn conv_out_len(fin: usize, kernel: usize, stride: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || fin < kernel || !(fin - kernel).is_multiple_of(stride) {
        return None;
    }
    Some((fin - kernel) / stride + 1)
}

pub fn deconv_out_len(fin: usize, kernel: usize, stride: usize) -> usize {
    (fin - 1) * stride + kernel
}

/// `y[co,t,fo] = b[co] + Σ_{ci,i} w[co,ci,i]·x[ci,t,fo·stride+i]`
///
/// `x` is `Cin×T×Fin`, `w` is `Cout×Cin×I`, `b` has `Cout` entries.
/// Padding is the caller's job; `(Fin − I)` must be a multiple of `stride`.
pub fn conv_freq<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (cin, tt, fin) = x.dims3()?;
    let (cout, wcin, k) = w.dims3()?;
    if wcin != cin {
        return shape_err(format!("conv kernel expects {wcin} input channels, got {cin}"));
    }
    check_bias(b, cout)?;
    let Some(fout) = conv_out_len(fin, k, stride) else {
        return shape_err(format!("frequency extent {fin} not tiled by kernel {k} at stride {stride}"));
    };

    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let row = cin * k;
    let mut y = vec![T::zero(); cout * tt * fout];
    let mut patches = vec![T::zero(); fout * row];
    let mut col = vec![T::zero(); cout];
    for t in 0..tt {
        for fo in 0..fout {
            let patch = &mut patches[fo * row..(fo + 1) * row];
            for ci in 0..cin {
                let src = (ci * tt + t) * fin + fo * stride;
                patch[ci * k..(ci + 1) * k].copy_from_slice(&xd[src..src + k]);
            }
        }
        for fo in 0..fout {
            gemv(wd, row, &patches[fo * row..(fo + 1) * row], &mut col);
            for co in 0..cout {
                y[(co * tt + t) * fout + fo] = bd[co] + col[co];
            }
        }
    }
    macs::add(cout * row * fout * tt);
    Tensor::new(&[cout, tt, fout], y)
}

/// Gradients of [`conv_freq`] with respect to `(x, w, b)`.
pub fn conv_freq_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (cin, tt, fin) = x.dims3()?;
    let (cout, _, k) = w.dims3()?;
    let (_, _, fout) = gy.dims3()?;
    let xd = x.data();
    let wd = w.data();
    let gyd = gy.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); cout];
    for co in 0..cout {
        for t in 0..tt {
            for fo in 0..fout {
                let g = gyd[(co * tt + t) * fout + fo];
                if g == T::zero() {
                    continue;
                }
                gb[co] = gb[co] + g;
                for ci in 0..cin {
                    let src = (ci * tt + t) * fin + fo * stride;
                    let wo = (co * cin + ci) * k;
                    axpy(g, &xd[src..src + k], &mut gw[wo..wo + k]);
                    axpy(g, &wd[wo..wo + k], &mut gx[src..src + k]);
                }
            }
        }
    }
    Ok((Tensor::new(x.shape(), gx)?, Tensor::new(w.shape(), gw)?, Tensor::from_vec(gb)))
}

/// Transposed frequency convolution.
///
/// `x` is `Cin×T×Fin`, `w` is `Cin×Cout×I`, output is `Cout×T×((Fin−1)·stride+I)`.
/// Each input position is mapped to `Cout·I` values by a linear layer; those
/// are overlap-added at `stride` along frequency and the bias is added once
/// per output element.
pub fn deconv_freq<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (cin, tt, fin) = x.dims3()?;
    let (wcin, cout, k) = w.dims3()?;
    if wcin != cin {
        return shape_err(format!("deconv kernel expects {wcin} input channels, got {cin}"));
    }
    check_bias(b, cout)?;
    if fin == 0 || stride == 0 {
        return shape_err("deconv needs at least one input position and a positive stride");
    }
    let fout = deconv_out_len(fin, k, stride);
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let span = cout * k;
    let mut y = vec![T::zero(); cout * tt * fout];
    let mut z = vec![T::zero(); span];
    for t in 0..tt {
        for fi in 0..fin {
            z.iter_mut().for_each(|v| *v = T::zero());
            for ci in 0..cin {
                let xv = xd[(ci * tt + t) * fin + fi];
                axpy(xv, &wd[ci * span..(ci + 1) * span], &mut z);
            }
            for co in 0..cout {
                let dst = (co * tt + t) * fout + fi * stride;
                for (o, zv) in y[dst..dst + k].iter_mut().zip(&z[co * k..(co + 1) * k]) {
                    *o = *o + *zv;
                }
            }
        }
    }
    for co in 0..cout {
        for v in &mut y[co * tt * fout..(co + 1) * tt * fout] {
            *v = *v + bd[co];
        }
    }
    macs::add(cin * span * fin * tt);
    Tensor::new(&[cout, tt, fout], y)
}

/// Gradients of [`deconv_freq`] with respect to `(x, w, b)`.
pub fn deconv_freq_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (cin, tt, fin) = x.dims3()?;
    let (_, cout, k) = w.dims3()?;
    let (_, _, fout) = gy.dims3()?;
    let span = cout * k;
    let xd = x.data();
    let wd = w.data();
    let gyd = gy.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); cout];
    for co in 0..cout {
        gb[co] = gyd[co * tt * fout..(co + 1) * tt * fout].iter().copied().sum();
    }
    let mut gz = vec![T::zero(); span];
    for t in 0..tt {
        for fi in 0..fin {
            for co in 0..cout {
                let src = (co * tt + t) * fout + fi * stride;
                gz[co * k..(co + 1) * k].copy_from_slice(&gyd[src..src + k]);
            }
            for ci in 0..cin {
                let xi = (ci * tt + t) * fin + fi;
                let wr = &wd[ci * span..(ci + 1) * span];
                gx[xi] = dot(wr, &gz);
                axpy(xd[xi], &gz, &mut gw[ci * span..(ci + 1) * span]);
            }
        }
    }
    Ok((Tensor::new(x.shape(), gx)?, Tensor::new(w.shape(), gw)?, Tensor::from_vec(gb)))
}

/// Zero-pads the last axis.
pub fn pad_last<T: Scalar>(x: &Tensor<T>, left: usize, right: usize) -> Tensor<T> {
    let shape = x.shape();
    let f = *shape.last().unwrap();
    let rows = x.len() / f.max(1);
    let nf = f + left + right;
    let mut out = vec![T::zero(); rows * nf];
    for r in 0..rows {
        out[r * nf + left..r * nf + left + f].copy_from_slice(&x.data()[r * f..(r + 1) * f]);
    }
    let mut ns = shape.to_vec();
    *ns.last_mut().unwrap() = nf;
    Tensor::new(&ns, out).expect("pad shape")
}

/// Keeps `len` entries of the last axis starting at `start`.
pub fn slice_last<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    let f = *shape.last().unwrap();
    if start + len > f {
        return shape_err(format!("slice {start}..{} exceeds extent {f}", start + len));
    }
    let rows = x.len() / f.max(1);
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&x.data()[r * f + start..r * f + start + len]);
    }
    let mut ns = shape.to_vec();
    *ns.last_mut().unwrap() = len;
    Tensor::new(&ns, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(shape: [usize; 3], v: &[f64]) -> Tensor<f64> {
        Tensor::new(&shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_difference_kernel() {
        let x = t3([1, 1, 3], &[1.0, 2.0, 3.0]);
        let w = t3([1, 1, 3], &[1.0, 0.0, -1.0]);
        let y = conv_freq(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y.data(), &[-2.0]);
    }

    #[test]
    fn conv_zero_kernel_gives_zero() {
        let x = t3([2, 3, 9], &(0..54).map(|v| v as f64).collect::<Vec<_>>());
        let y = conv_freq(&x, &Tensor::zeros(&[4, 2, 3]), &Tensor::zeros(&[4]), 3).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[4, 3, 3]);
    }

    #[test]
    fn conv_full_band_shape() {
        let x = Tensor::<f32>::zeros(&[32, 2, 132]);
        let y = conv_freq(&x, &Tensor::zeros(&[8, 32, 8]), &Tensor::zeros(&[8]), 4).unwrap();
        assert_eq!(y.shape(), &[8, 2, 32]);
    }

    #[test]
    fn conv_rejects_untiled_input() {
        let x = Tensor::<f32>::zeros(&[1, 1, 10]);
        assert!(conv_freq(&x, &Tensor::zeros(&[1, 1, 4]), &Tensor::zeros(&[1]), 4).is_err());
        assert!(conv_freq(&x, &Tensor::zeros(&[1, 2, 4]), &Tensor::zeros(&[1]), 2).is_err());
    }

    #[test]
    fn deconv_overlap_add_example() {
        let x = t3([1, 1, 2], &[1.0, 2.0]);
        let w = t3([1, 1, 2], &[1.0, 1.0]);
        let y = deconv_freq(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 2.0]);
    }

    #[test]
    fn deconv_zero_kernel_gives_bias() {
        let x = t3([2, 2, 3], &[1.0; 12]);
        let y = deconv_freq(&x, &Tensor::zeros(&[2, 3, 4]), &Tensor::from_vec(vec![0.5, -1.0, 2.0]), 2).unwrap();
        assert_eq!(y.shape(), &[3, 2, 8]);
        for co in 0..3 {
            let expect = [0.5, -1.0, 2.0][co];
            assert!(y.data()[co * 16..(co + 1) * 16].iter().all(|&v| v == expect));
        }
    }

    #[test]
    fn deconv_macs_are_linear_form() {
        let x = Tensor::<f32>::zeros(&[8, 1, 32]);
        let (_, n) = macs::measure(|| deconv_freq(&x, &Tensor::zeros(&[8, 32, 8]), &Tensor::zeros(&[32]), 4).unwrap());
        assert_eq!(n, 65_536);
    }

    #[test]
    fn unit_kernels_are_identity() {
        let x = t3([1, 2, 5], &[0.3, -1.0, 2.0, 4.0, 5.5, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let one = t3([1, 1, 1], &[1.0]);
        let zero = Tensor::zeros(&[1]);
        let y = conv_freq(&x, &one, &zero, 1).unwrap();
        let z = deconv_freq(&y, &one, &zero, 1).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn pad_and_slice() {
        let x = t3([1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let p = pad_last(&x, 1, 2);
        assert_eq!(p.data(), &[0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
        assert_eq!(slice_last(&p, 1, 2).unwrap(), x);
    }
}
