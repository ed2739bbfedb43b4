//! Reverse-mode differentiation over the layer primitives.
//!
//! A [`Tape`] records each primitive application together with its output.
//! [`Tape::backward`] walks the records in reverse and applies the adjoint of
//! every primitive, accumulating gradients for leaves.

use crate::error::{shape_err, Error, Result};
use crate::layers::conv::{conv_freq_backward, deconv_freq_backward};
use crate::layers::dense::{linear_backward, prelu_backward};
use crate::layers::lstm::lstm_sequence_backward;
use crate::layers::norm::{cgln_apply, cgln_apply_backward, cum_moments, cum_moments_backward};
use crate::layers::{
    conv_freq, deconv_freq, linear, lstm_sequence, pad_last, prelu, slice_last, LstmWeights, NormLayout,
};
use crate::stft::{offline_istft, offline_istft_adjoint, offline_stft, offline_stft_adjoint, StftConfig};
use crate::tensor::{permute3, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var, Vec<usize>),
    PadLast { x: Var, left: usize, right: usize },
    SliceLast { x: Var, start: usize, len: usize },
    Permute { x: Var, perm: [usize; 3] },
    Concat { xs: Vec<Var>, axis: usize },
    Conv { x: Var, w: Var, b: Var, stride: usize },
    Deconv { x: Var, w: Var, b: Var, stride: usize },
    Prelu { x: Var, a: Var },
    Linear { x: Var, w: Var, b: Var },
    Lstm { x: Var, h0: Var, c0: Var, wi: Var, wh: Var, bi: Var, bh: Var },
    Moments { x: Var, prev: Option<Var>, layout: NormLayout },
    CglnApply { x: Var, m: Var, count0: usize, layout: NormLayout, g: Var, b: Var, eps: T },
    Stft { x: Var, cfg: StftConfig },
    Istft { x: Var, cfg: StftConfig, len: usize },
    Magnitude(Var),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

#[derive(Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients of the root with respect to every leaf that influences it.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when `v` does not reach the root.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn inverse_perm(p: [usize; 3]) -> [usize; 3] {
    let mut inv = [0; 3];
    for (i, &v) in p.iter().enumerate() {
        inv[v] = i;
    }
    inv
}

fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
    let rank = first.rank();
    if axis >= rank {
        return shape_err("concat axis out of range");
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut total = 0;
    for p in parts {
        if p.rank() != rank
            || p.shape()[..axis] != first.shape()[..axis]
            || p.shape()[axis + 1..] != first.shape()[axis + 1..]
        {
            return shape_err(format!("cannot concat {:?} with {:?}", first.shape(), p.shape()));
        }
        total += p.shape()[axis];
    }
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let n = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * n..(o + 1) * n]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(&shape, out)
}

fn zip_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return shape_err(format!("elementwise op on {:?} and {:?}", a.shape(), b.shape()));
    }
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

fn magnitude<T: Scalar>(ri: &Tensor<T>) -> Result<Tensor<T>> {
    let (two, tt, nf) = ri.dims3()?;
    if two != 2 {
        return shape_err("magnitude expects a 2×T×F spectrum");
    }
    let (re, im) = ri.data().split_at(tt * nf);
    Tensor::new(&[tt, nf], re.iter().zip(im).map(|(&a, &b)| (a * a + b * b).sqrt()).collect())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: t });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, vars: &[Var]) -> Result<()> {
        match vars.iter().find(|v| v.0 >= self.nodes.len()) {
            Some(v) => Err(Error::Tape(format!("variable {} not on this tape", v.0))),
            None => Ok(()),
        }
    }

    fn v(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn eval(&self, op: &Op<T>) -> Result<Tensor<T>> {
        Ok(match op {
            Op::Leaf => return Err(Error::Tape("leaves have no rule".into())),
            Op::Add(a, b) => zip_with(self.v(*a), self.v(*b), |x, y| x + y)?,
            Op::Sub(a, b) => zip_with(self.v(*a), self.v(*b), |x, y| x - y)?,
            Op::Mul(a, b) => zip_with(self.v(*a), self.v(*b), |x, y| x * y)?,
            Op::Scale(a, s) => self.v(*a).map(|x| x * *s),
            Op::Abs(a) => self.v(*a).map(|x| x.abs()),
            Op::Sum(a) => Tensor::scalar(self.v(*a).data().iter().copied().sum()),
            Op::Mean(a) => {
                let x = self.v(*a);
                Tensor::scalar(x.data().iter().copied().sum::<T>() / T::lit(x.len() as f64))
            }
            Op::Reshape(a, shape) => self.v(*a).clone().reshape(shape)?,
            Op::PadLast { x, left, right } => pad_last(self.v(*x), *left, *right),
            Op::SliceLast { x, start, len } => slice_last(self.v(*x), *start, *len)?,
            Op::Permute { x, perm } => permute3(self.v(*x), *perm)?,
            Op::Concat { xs, axis } => concat(&xs.iter().map(|v| self.v(*v)).collect::<Vec<_>>(), *axis)?,
            Op::Conv { x, w, b, stride } => conv_freq(self.v(*x), self.v(*w), self.v(*b), *stride)?,
            Op::Deconv { x, w, b, stride } => deconv_freq(self.v(*x), self.v(*w), self.v(*b), *stride)?,
            Op::Prelu { x, a } => {
                let a = self.v(*a);
                if a.len() != 1 {
                    return shape_err("PReLU slope must be a single value");
                }
                prelu(self.v(*x), a.data()[0])
            }
            Op::Linear { x, w, b } => linear(self.v(*x), self.v(*w), self.v(*b))?,
            Op::Lstm { x, h0, c0, wi, wh, bi, bh } => {
                let w = LstmWeights { wi: self.v(*wi), wh: self.v(*wh), bi: self.v(*bi), bh: self.v(*bh) };
                lstm_sequence(self.v(*x), self.v(*h0), self.v(*c0), &w)?
            }
            Op::Moments { x, prev, layout } => cum_moments(self.v(*x), *layout, prev.map(|p| self.v(p)))?,
            Op::CglnApply { x, m, count0, layout, g, b, eps } => {
                cgln_apply(self.v(*x), *layout, self.v(*m), *count0, self.v(*g), self.v(*b), *eps)?
            }
            Op::Stft { x, cfg } => offline_stft(cfg, self.v(*x).data())?,
            Op::Istft { x, cfg, len } => Tensor::from_vec(offline_istft(cfg, self.v(*x), *len)?),
            Op::Magnitude(a) => magnitude(self.v(*a))?,
        })
    }

    fn push(&mut self, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        self.check(inputs)?;
        let value = self.eval(&op)?;
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.push(Op::Scale(a, s), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Abs(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape(a, shape.to_vec()), &[a])
    }

    pub fn pad_last(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        self.push(Op::PadLast { x, left, right }, &[x])
    }

    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::SliceLast { x, start, len }, &[x])
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: [usize; 3]) -> Result<Var> {
        let mut seen = [false; 3];
        for &p in &perm {
            if p > 2 || seen[p] {
                return shape_err(format!("invalid permutation {perm:?}"));
            }
            seen[p] = true;
        }
        self.push(Op::Permute { x, perm }, &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.push(Op::Concat { xs: xs.to_vec(), axis }, xs)
    }

    pub fn conv_freq(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        self.push(Op::Conv { x, w, b, stride }, &[x, w, b])
    }

    pub fn deconv_freq(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        self.push(Op::Deconv { x, w, b, stride }, &[x, w, b])
    }

    pub fn prelu(&mut self, x: Var, a: Var) -> Result<Var> {
        self.push(Op::Prelu { x, a }, &[x, a])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.push(Op::Linear { x, w, b }, &[x, w, b])
    }

    /// LSTM over `N×T×In`; result is `N×T×2H` holding `[h_t | c_t]`.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm(&mut self, x: Var, h0: Var, c0: Var, wi: Var, wh: Var, bi: Var, bh: Var) -> Result<Var> {
        self.push(Op::Lstm { x, h0, c0, wi, wh, bi, bh }, &[x, h0, c0, wi, wh, bi, bh])
    }

    pub fn cum_moments(&mut self, x: Var, prev: Option<Var>, layout: NormLayout) -> Result<Var> {
        let mut ins = vec![x];
        ins.extend(prev);
        self.push(Op::Moments { x, prev, layout }, &ins)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn cgln_apply(
        &mut self,
        x: Var,
        m: Var,
        count0: usize,
        layout: NormLayout,
        g: Var,
        b: Var,
        eps: T,
    ) -> Result<Var> {
        self.push(Op::CglnApply { x, m, count0, layout, g, b, eps }, &[x, m, g, b])
    }

    /// cGLN continuing from `prev` moments (`[Σx, Σx²]`) and `count0` values.
    /// Returns the output and the moments after the last frame.
    #[allow(clippy::too_many_arguments)]
    pub fn cgln(
        &mut self,
        x: Var,
        layout: NormLayout,
        g: Var,
        b: Var,
        eps: T,
        prev: Option<Var>,
        count0: usize,
    ) -> Result<(Var, Var)> {
        let m = self.cum_moments(x, prev, layout)?;
        let y = self.cgln_apply(x, m, count0, layout, g, b, eps)?;
        let frames = self.value(m).shape()[0];
        let last = self.reshape(m, &[frames * 2])?;
        let last = self.slice_last(last, 2 * (frames - 1), 2)?;
        Ok((y, last))
    }

    pub fn stft(&mut self, x: Var, cfg: &StftConfig) -> Result<Var> {
        self.push(Op::Stft { x, cfg: *cfg }, &[x])
    }

    pub fn istft(&mut self, x: Var, cfg: &StftConfig, len: usize) -> Result<Var> {
        self.push(Op::Istft { x, cfg: *cfg, len }, &[x])
    }

    pub fn magnitude(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Magnitude(x), &[x])
    }

    /// Re-evaluates every recorded primitive from its recorded inputs and
    /// reports the first node whose output differs.
    pub fn replay(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            if self.eval(&node.op)? != node.value {
                return Err(Error::Tape(format!("node {i} does not reproduce its recorded output")));
            }
        }
        Ok(())
    }

    /// Gradients of the scalar `root` with respect to every recorded value.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        self.backward_with_seed(root, T::one())
    }

    pub fn backward_with_seed(&self, root: Var, seed: T) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Tape("backward on an empty tape".into()));
        }
        self.check(&[root])?;
        if self.v(root).len() != 1 {
            return Err(Error::Tape(format!("root must be scalar, has shape {:?}", self.v(root).shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.v(root).shape(), seed));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop(&node.op, &node.value, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor<T>| {
            let slot = &mut grads[v.0];
            match slot {
                Some(e) => {
                    for (a, b) in e.data_mut().iter_mut().zip(t.data()) {
                        *a = *a + *b;
                    }
                }
                None => *slot = Some(t),
            }
        };
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, zip_with(g, self.v(*b), |x, y| x * y)?);
                acc(*b, zip_with(g, self.v(*a), |x, y| x * y)?);
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * *s)),
            Op::Abs(a) => acc(
                *a,
                zip_with(g, self.v(*a), |gv, x| {
                    if x > T::zero() {
                        gv
                    } else if x < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })?,
            ),
            Op::Sum(a) => acc(*a, Tensor::full(self.v(*a).shape(), g.data()[0])),
            Op::Mean(a) => {
                let x = self.v(*a);
                acc(*a, Tensor::full(x.shape(), g.data()[0] / T::lit(x.len() as f64)));
            }
            Op::Reshape(a, _) => acc(*a, g.clone().reshape(self.v(*a).shape())?),
            Op::PadLast { x, left, .. } => {
                let f = *self.v(*x).shape().last().unwrap();
                acc(*x, slice_last(g, *left, f)?);
            }
            Op::SliceLast { x, start, len } => {
                let f = *self.v(*x).shape().last().unwrap();
                acc(*x, pad_last(g, *start, f - start - len));
            }
            Op::Permute { x, perm } => acc(*x, permute3(g, inverse_perm(*perm))?),
            Op::Concat { xs, axis } => {
                let outer: usize = out.shape()[..*axis].iter().product();
                let inner: usize = out.shape()[axis + 1..].iter().product();
                let total = out.shape()[*axis];
                let mut offset = 0;
                for v in xs {
                    let part = self.v(*v);
                    let n = part.shape()[*axis];
                    let mut d = Vec::with_capacity(part.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[base..base + n * inner]);
                    }
                    acc(*v, Tensor::new(part.shape(), d)?);
                    offset += n;
                }
            }
            Op::Conv { x, w, b, stride } => {
                let (gx, gw, gb) = conv_freq_backward(self.v(*x), self.v(*w), *stride, g)?;
                acc(*x, gx);
                acc(*w, gw);
                acc(*b, gb.reshape(self.v(*b).shape())?);
            }
            Op::Deconv { x, w, b, stride } => {
                let (gx, gw, gb) = deconv_freq_backward(self.v(*x), self.v(*w), *stride, g)?;
                acc(*x, gx);
                acc(*w, gw);
                acc(*b, gb.reshape(self.v(*b).shape())?);
            }
            Op::Prelu { x, a } => {
                let av = self.v(*a);
                let (gx, ga) = prelu_backward(self.v(*x), av.data()[0], g);
                acc(*x, gx);
                acc(*a, Tensor::full(av.shape(), ga));
            }
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = linear_backward(self.v(*x), self.v(*w), g)?;
                acc(*x, gx);
                acc(*w, gw);
                acc(*b, gb.reshape(self.v(*b).shape())?);
            }
            Op::Lstm { x, h0, c0, wi, wh, bi, bh } => {
                let w = LstmWeights { wi: self.v(*wi), wh: self.v(*wh), bi: self.v(*bi), bh: self.v(*bh) };
                let gr = lstm_sequence_backward(self.v(*x), self.v(*h0), self.v(*c0), &w, out, g)?;
                acc(*x, gr.x);
                acc(*h0, gr.h0);
                acc(*c0, gr.c0);
                acc(*wi, gr.wi);
                acc(*wh, gr.wh);
                acc(*bi, gr.bi.reshape(self.v(*bi).shape())?);
                acc(*bh, gr.bh.reshape(self.v(*bh).shape())?);
            }
            Op::Moments { x, prev, layout } => {
                let (gx, gp) = cum_moments_backward(self.v(*x), *layout, g)?;
                acc(*x, gx);
                if let Some(p) = prev {
                    acc(*p, gp.reshape(self.v(*p).shape())?);
                }
            }
            Op::CglnApply { x, m, count0, layout, g: gamma, b, eps } => {
                let gr = cgln_apply_backward(self.v(*x), *layout, self.v(*m), *count0, self.v(*gamma), *eps, g)?;
                acc(*x, gr.x);
                acc(*m, gr.moments);
                acc(*gamma, gr.gamma.reshape(self.v(*gamma).shape())?);
                acc(*b, gr.beta.reshape(self.v(*b).shape())?);
            }
            Op::Stft { x, cfg } => {
                let len = self.v(*x).len();
                let gx = offline_stft_adjoint(cfg, g, len)?;
                acc(*x, Tensor::new(self.v(*x).shape(), gx)?);
            }
            Op::Istft { x, cfg, .. } => {
                let frames = self.v(*x).shape()[1];
                acc(*x, offline_istft_adjoint(cfg, g.data(), frames)?);
            }
            Op::Magnitude(a) => {
                let ri = self.v(*a);
                let n = out.len();
                let (re, im) = ri.data().split_at(n);
                let mut d = vec![T::zero(); 2 * n];
                for k in 0..n {
                    let m = out.data()[k];
                    if m > T::zero() {
                        d[k] = g.data()[k] * re[k] / m;
                        d[n + k] = g.data()[k] * im[k] / m;
                    }
                }
                acc(*a, Tensor::new(ri.shape(), d)?);
            }
        }
        Ok(())
    }
}
