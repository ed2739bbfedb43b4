//! Dense row-major tensors of rank 1 to 3 and the numeric helpers shared by
//! every layer kernel.

use std::fmt::Debug;

use num_traits::Float;
use rustfft::FftNum;

use crate::error::{shape_err, Result};

/// Floating-point element type. Inference runs on `f32`, gradient checks and
/// training on `f64`.
pub trait Scalar: Float + FftNum + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    const BITS: u32;

    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    #[inline]
    fn dot(a: &[Self], b: &[Self]) -> Self {
        dot_portable(a, b)
    }

    /// `out[r] = w[r·cols..(r+1)·cols] · x` for every row of `out`.
    #[inline]
    fn gemv(w: &[Self], cols: usize, x: &[Self], out: &mut [Self]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = Self::dot(&w[r * cols..(r + 1) * cols], &x[..cols]);
        }
    }
}

impl Scalar for f32 {
    const BITS: u32 = 32;

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn dot(a: &[Self], b: &[Self]) -> Self {
        crate::simd::dot_f32(a, b).unwrap_or_else(|| dot_portable(a, b))
    }

    #[inline]
    fn gemv(w: &[Self], cols: usize, x: &[Self], out: &mut [Self]) {
        if !crate::simd::gemv_f32(w, cols, x, out) {
            for (r, o) in out.iter_mut().enumerate() {
                *o = dot_portable(&w[r * cols..(r + 1) * cols], &x[..cols]);
            }
        }
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return shape_err(format!("rank {} not supported", shape.len()));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!("shape {:?} needs {} values, got {}", shape, n, data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn precision_bits(&self) -> u32 {
        T::BITS
    }

    /// Extents of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => shape_err(format!("expected rank-3 tensor, got {:?}", self.shape)),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => shape_err(format!("expected rank-2 tensor, got {:?}", self.shape)),
        }
    }

    pub fn at3(&self, a: usize, b: usize, c: usize) -> T {
        let (_, d1, d2) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(a * d1 + b) * d2 + c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.is_empty() || shape.len() > 3 {
            return shape_err(format!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).fold(0.0, f64::max)
    }

    /// Slice of one time frame `t` from a `C×T×F` tensor, gathered as `C×F`.
    pub fn frame(&self, t: usize) -> Result<Tensor<T>> {
        let (c, tt, f) = self.dims3()?;
        if t >= tt {
            return shape_err(format!("frame {t} out of range {tt}"));
        }
        let mut out = Vec::with_capacity(c * f);
        for ch in 0..c {
            let base = (ch * tt + t) * f;
            out.extend_from_slice(&self.data[base..base + f]);
        }
        Ok(Tensor { shape: vec![c, 1, f], data: out })
    }

    /// Concatenate `C×1×F` frames into a `C×T×F` tensor.
    pub fn stack_frames(frames: &[Tensor<T>]) -> Result<Tensor<T>> {
        let Some(first) = frames.first() else {
            return shape_err("no frames to stack");
        };
        let (c, one, f) = first.dims3()?;
        if one != 1 {
            return shape_err("stack_frames expects single-frame tensors");
        }
        let tt = frames.len();
        let mut out = vec![T::zero(); c * tt * f];
        for (t, fr) in frames.iter().enumerate() {
            if fr.shape() != first.shape() {
                return shape_err("inconsistent frame shapes");
            }
            for ch in 0..c {
                let dst = (ch * tt + t) * f;
                out[dst..dst + f].copy_from_slice(&fr.data[ch * f..(ch + 1) * f]);
            }
        }
        Ok(Tensor { shape: vec![c, tt, f], data: out })
    }
}

/// Reorders the axes of a rank-3 tensor: output axis `i` is input axis `perm[i]`.
pub fn permute3<T: Scalar>(x: &Tensor<T>, perm: [usize; 3]) -> Result<Tensor<T>> {
    let (d0, d1, d2) = x.dims3()?;
    let dims = [d0, d1, d2];
    let nd = [dims[perm[0]], dims[perm[1]], dims[perm[2]]];
    let strides = [d1 * d2, d2, 1];
    let src_stride = [strides[perm[0]], strides[perm[1]], strides[perm[2]]];
    let xd = x.data();
    let mut out = Vec::with_capacity(x.len());
    for a in 0..nd[0] {
        for b in 0..nd[1] {
            let base = a * src_stride[0] + b * src_stride[1];
            for c in 0..nd[2] {
                out.push(xd[base + c * src_stride[2]]);
            }
        }
    }
    Tensor::new(&nd, out)
}

const LANES: usize = 16;

/// Matrix-vector product: `out[r] = w[r·cols..(r+1)·cols] · x`.
#[inline]
pub fn gemv<T: Scalar>(w: &[T], cols: usize, x: &[T], out: &mut [T]) {
    T::gemv(w, cols, x, out)
}

/// Dot product over the common prefix of `a` and `b`.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    T::dot(a, b)
}

/// Dot product with independent accumulators so the loop vectorizes and
/// the add chains overlap.
#[inline]
pub fn dot_portable<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let split = n - n % LANES;
    let mut acc = [T::zero(); LANES];
    for (x, y) in a[..split].chunks_exact(LANES).zip(b[..split].chunks_exact(LANES)) {
        let x: &[T; LANES] = x.try_into().unwrap();
        let y: &[T; LANES] = y.try_into().unwrap();
        for k in 0..LANES {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        tail = tail + *x * *y;
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for k in 0..width {
            acc[k] = acc[k] + acc[k + width];
        }
    }
    acc[0] + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * *xv;
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Thread-local counter of multiply-accumulate operations performed by the
/// dense kernels in [`crate::layers`]. Only matrix products are counted.
pub mod macs {
    use std::cell::Cell;

    thread_local! {
        static COUNT: Cell<u64> = const { Cell::new(0) };
    }

    #[inline]
    pub fn add(n: usize) {
        COUNT.with(|c| c.set(c.get() + n as u64));
    }

    pub fn reset() {
        COUNT.with(|c| c.set(0));
    }

    pub fn get() -> u64 {
        COUNT.with(|c| c.get())
    }

    /// Runs `f` and returns its result along with the MACs it performed.
    pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
        let before = get();
        let r = f();
        (r, get() - before)
    }
}
