use crate::error::{shape_err, Result};
use crate::tensor::{axpy, gemv, macs, Scalar, Tensor};

/// `x` where `x ≥ 0`, `a·x` otherwise. `a` is a single shared slope.
pub fn prelu<T: Scalar>(x: &Tensor<T>, a: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { a * v })
}

pub fn prelu_inplace<T: Scalar>(x: &mut [T], a: T) {
    for v in x {
        if *v < T::zero() {
            *v = a * *v;
        }
    }
}

/// Gradients of [`prelu`] with respect to `x` and the slope.
pub fn prelu_backward<T: Scalar>(x: &Tensor<T>, a: T, gy: &Tensor<T>) -> (Tensor<T>, T) {
    let mut ga = T::zero();
    let gx = x
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&v, &g)| {
            if v >= T::zero() {
                g
            } else {
                ga = ga + g * v;
                a * g
            }
        })
        .collect();
    (Tensor::new(x.shape(), gx).expect("same shape"), ga)
}

/// Affine map over the last axis: `x` is `…×N`, `w` is `M×N`, `b` has `M`
/// entries; the result is `…×M`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = w.dims2()?;
    let last = *x.shape().last().unwrap();
    if last != n || b.len() != m {
        return shape_err(format!("linear {m}×{n} (bias {}) applied to {:?}", b.len(), x.shape()));
    }
    let rows = x.len() / n;
    let wd = w.data();
    let bd = b.data();
    let mut out = vec![T::zero(); rows * m];
    for r in 0..rows {
        let xr = &x.data()[r * n..(r + 1) * n];
        let o = &mut out[r * m..(r + 1) * m];
        gemv(wd, n, xr, o);
        for (v, b) in o.iter_mut().zip(bd) {
            *v = *b + *v;
        }
    }
    macs::add(rows * m * n);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = m;
    Tensor::new(&shape, out)
}

/// Gradients of [`linear`] with respect to `(x, w, b)`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (m, n) = w.dims2()?;
    let rows = x.len() / n;
    let wd = w.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); m];
    for r in 0..rows {
        let xr = &x.data()[r * n..(r + 1) * n];
        for j in 0..m {
            let g = gy.data()[r * m + j];
            gb[j] = gb[j] + g;
            axpy(g, xr, &mut gw[j * n..(j + 1) * n]);
            axpy(g, &wd[j * n..(j + 1) * n], &mut gx[r * n..(r + 1) * n]);
        }
    }
    Ok((Tensor::new(x.shape(), gx)?, Tensor::new(w.shape(), gw)?, Tensor::from_vec(gb)))
}
