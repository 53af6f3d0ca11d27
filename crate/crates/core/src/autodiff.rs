//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its value and a record of its
//! inputs. Inputs always precede their consumers on the tape, so the graph
//! is acyclic by construction and [`Tape::backward`] is a single reverse
//! sweep. Gradients of tracked leaves accumulate across `backward` calls
//! until [`Tape::zero_grad`].

use alloc::vec;
use alloc::vec::Vec;

use crate::conv::{self, ConvGeometry, ConvSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, T),
    Shift(Var),
    Tanh(Var),
    Abs(Var),
    Relu(Var),
    ClampUpper(Var, T),
    Clamp(Var, T, T),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
        geom: ConvGeometry,
    },
    Concat(Vec<Var>),
    SliceChannels {
        src: Var,
        start: usize,
    },
    Upsample(Var, usize),
    Sum(Var),
    SumSquares(Var),
    SquaredDistance(Var, Var),
    Blend {
        weight: Var,
        current: Var,
        previous: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

/// Shape of a binary elementwise result; one side may be a single element.
fn broadcast_shape(op: &'static str, a: &Shape, b: &Shape) -> Result<Shape> {
    if a == b || b.is_scalar() {
        Ok(a.clone())
    } else if a.is_scalar() {
        Ok(b.clone())
    } else {
        Err(Error::ShapeMismatch {
            op,
            left: a.clone(),
            right: b.clone(),
        })
    }
}

/// Index into an operand that is either full-size or a broadcast scalar.
#[inline]
fn at<T: Copy>(data: &[T], i: usize) -> T {
    if data.len() == 1 {
        data[0]
    } else {
        data[i]
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

/// Add `g` (full-size) into the gradient of `v`, reducing when `v` is a
/// broadcast scalar.
fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize, g: impl Iterator<Item = T>) {
    let dst = slot(grads, v, len);
    if len == 1 {
        let s: T = g.sum();
        dst[0] = dst[0] + s;
    } else {
        for (d, x) in dst.iter_mut().zip(g) {
            *d = *d + x;
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Record a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Record a leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &Shape {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a tracked leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(name, va.shape(), vb.shape())?;
        let n = shape.numel();
        let data = (0..n).map(|i| f(at(va.data(), i), at(vb.data(), i))).collect();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::from_vec(shape, data)?, op, tracked))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        let tracked = self.tracked(a);
        self.push(value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scalar_mul(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::ScalarMul(a, c))
    }

    /// `x + c` elementwise.
    pub fn shift(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x + c, Op::Shift(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    /// `|x|`; the gradient at exactly zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    /// `min(x, c)`; gradient passes only where `x < c`.
    pub fn clamp_upper(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x.min(c), Op::ClampUpper(a, c))
    }

    /// `min(max(x, lo), hi)`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: &ConvSpec) -> Result<Var> {
        let (n, c, h, w) = self.shape(input).as_nchw("conv2d")?;
        if c != spec.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d input channels",
                left: self.shape(input).clone(),
                right: Shape::new(spec.weight_shape()),
            });
        }
        if self.shape(weight).dims() != spec.weight_shape() {
            return Err(Error::ShapeMismatch {
                op: "conv2d weights",
                left: self.shape(weight).clone(),
                right: Shape::new(spec.weight_shape()),
            });
        }
        if self.shape(bias).dims() != [spec.out_channels] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: self.shape(bias).clone(),
                right: Shape::new([spec.out_channels]),
            });
        }
        let (oh, ow) = spec.output_dims(h, w)?;
        let geom = ConvGeometry {
            batch: n,
            height: h,
            width: w,
            out_height: oh,
            out_width: ow,
        };
        let mut out = vec![T::zero(); n * spec.out_channels * oh * ow];
        conv::forward(
            spec,
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &mut out,
        );
        let tracked = self.tracked(input) || self.tracked(weight) || self.tracked(bias);
        let value = Tensor::from_vec(Shape::nchw(n, spec.out_channels, oh, ow), out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec: *spec,
                geom,
            },
            tracked,
        ))
    }

    /// Concatenate rank-4 tensors along the channel axis, in order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidShape {
            op: "concat_channels",
            shape: Shape::new([0]),
            reason: "no parts given".into(),
        })?;
        if parts.len() == 1 {
            let value = self.value(first).clone();
            let tracked = self.tracked(first);
            return Ok(self.push(value, Op::Concat(parts.to_vec()), tracked));
        }
        let (n, _, h, w) = self.shape(first).as_nchw("concat_channels")?;
        let mut total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.shape(p).as_nchw("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    left: self.shape(first).clone(),
                    right: self.shape(p).clone(),
                });
            }
            total += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for &p in parts {
                let v = self.value(p);
                let pc = v.shape().dims()[1];
                data.extend_from_slice(&v.data()[b * pc * hw..(b + 1) * pc * hw]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        let value = Tensor::from_vec(Shape::nchw(n, total, h, w), data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), tracked))
    }

    /// Channels `start..start+len` of a rank-4 tensor.
    pub fn slice_channels(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.shape(src).as_nchw("slice_channels")?;
        if len == 0 || start + len > c {
            return Err(Error::InvalidShape {
                op: "slice_channels",
                shape: self.shape(src).clone(),
                reason: alloc::format!("channel range {start}..{} out of bounds", start + len),
            });
        }
        let hw = h * w;
        let v = self.value(src).data();
        let mut data = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            let base = (b * c + start) * hw;
            data.extend_from_slice(&v[base..base + len * hw]);
        }
        let tracked = self.tracked(src);
        let value = Tensor::from_vec(Shape::nchw(n, len, h, w), data)?;
        Ok(self.push(value, Op::SliceChannels { src, start }, tracked))
    }

    /// Nearest-neighbour upsampling of both spatial extents by `factor`.
    pub fn nearest_upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = self.shape(input).as_nchw("nearest_upsample")?;
        if factor == 0 {
            return Err(Error::InvalidShape {
                op: "nearest_upsample",
                shape: self.shape(input).clone(),
                reason: "factor must be at least 1".into(),
            });
        }
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(n * c * oh * ow);
        for plane in src.chunks_exact(h * w) {
            for y in 0..oh {
                let row = &plane[(y / factor) * w..(y / factor + 1) * w];
                for x in 0..ow {
                    data.push(row[x / factor]);
                }
            }
        }
        let tracked = self.tracked(input);
        let value = Tensor::from_vec(Shape::nchw(n, c, oh, ow), data)?;
        Ok(self.push(value, Op::Upsample(input, factor), tracked))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|&x| x * x).sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::SumSquares(a), tracked)
    }

    /// `Σ (a − b)²` over all elements.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: "squared_distance",
                left: va.shape().clone(),
                right: vb.shape().clone(),
            });
        }
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::scalar(s), Op::SquaredDistance(a, b), tracked))
    }

    /// Elementwise convex blend `w ⊗ current + (1 − w) ⊗ previous`.
    ///
    /// The result is clipped to the per-element envelope of `current` and
    /// `previous` so rounding never leaves it; `w = 1` returns `current`
    /// bit-for-bit.
    pub fn blend(&mut self, weight: Var, current: Var, previous: Var) -> Result<Var> {
        let (w, h, p) = (self.value(weight), self.value(current), self.value(previous));
        for other in [h, p] {
            if w.shape() != other.shape() {
                return Err(Error::ShapeMismatch {
                    op: "blend",
                    left: w.shape().clone(),
                    right: other.shape().clone(),
                });
            }
        }
        let data = w
            .data()
            .iter()
            .zip(h.data())
            .zip(p.data())
            .map(|((&w, &h), &p)| {
                let v = w * h + (T::one() - w) * p;
                v.max(h.min(p)).min(h.max(p))
            })
            .collect();
        let value = Tensor::from_vec(w.shape().clone(), data)?;
        let tracked = self.tracked(weight) || self.tracked(current) || self.tracked(previous);
        Ok(self.push(
            value,
            Op::Blend {
                weight,
                current,
                previous,
            },
            tracked,
        ))
    }

    /// Which linear piece every kinked op (`abs`, `relu`, clamps) sits on,
    /// element by element. Two forward passes with equal signatures are on
    /// the same smooth branch everywhere.
    pub fn kink_signature(&self) -> Vec<u8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            let region = |x: T, kink: T| -> u8 {
                if x < kink {
                    0
                } else if x > kink {
                    2
                } else {
                    1
                }
            };
            match node.op {
                Op::Abs(a) | Op::Relu(a) => sig.extend(
                    self.value(a).data().iter().map(|&x| region(x, T::zero())),
                ),
                Op::ClampUpper(a, c) => {
                    sig.extend(self.value(a).data().iter().map(|&x| region(x, c)))
                }
                Op::Clamp(a, lo, hi) => sig.extend(
                    self.value(a)
                        .data()
                        .iter()
                        .map(|&x| region(x, lo) * 3 + region(x, hi)),
                ),
                _ => {}
            }
        }
        sig
    }

    /// Backpropagate from a single-element `loss`, adding into the gradients
    /// of every tracked leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.shape(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).clone()));
        }
        if !self.tracked(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
        }

        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &self.nodes[i];
            if !matches!(node.op, Op::Leaf) {
                continue;
            }
            match &mut self.grads[i] {
                Some(acc) => {
                    for (a, &x) in acc.data_mut().iter_mut().zip(&g) {
                        *a = *a + x;
                    }
                }
                slot @ None => *slot = Some(Tensor::from_vec(node.value.shape().clone(), g)?),
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.value(v).data();
        let want = |v: Var| self.tracked(v);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                if want(a) {
                    accumulate(grads, a, val(a).len(), g.iter().copied());
                }
                if want(b) {
                    let sign = if matches!(op, Op::Sub(..)) { -T::one() } else { T::one() };
                    accumulate(grads, b, val(b).len(), g.iter().map(|&x| x * sign));
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(a), val(b));
                if want(a) {
                    let it = g.iter().enumerate().map(|(i, &x)| x * at(db, i));
                    accumulate(grads, a, da.len(), it);
                }
                if want(b) {
                    let it = g.iter().enumerate().map(|(i, &x)| x * at(da, i));
                    accumulate(grads, b, db.len(), it);
                }
            }
            Op::ScalarMul(a, c) => accumulate(grads, a, g.len(), g.iter().map(|&x| x * c)),
            Op::Shift(a) => accumulate(grads, a, g.len(), g.iter().copied()),
            Op::Tanh(a) => {
                let it = g.iter().zip(out.data()).map(|(&x, &y)| x * (T::one() - y * y));
                accumulate(grads, a, g.len(), it);
            }
            Op::Abs(a) => {
                let it = g.iter().zip(val(a)).map(|(&x, &v)| {
                    if v > T::zero() {
                        x
                    } else if v < T::zero() {
                        -x
                    } else {
                        T::zero()
                    }
                });
                accumulate(grads, a, g.len(), it);
            }
            Op::Relu(a) => {
                let it = g
                    .iter()
                    .zip(val(a))
                    .map(|(&x, &v)| if v > T::zero() { x } else { T::zero() });
                accumulate(grads, a, g.len(), it);
            }
            Op::ClampUpper(a, c) => {
                let it = g
                    .iter()
                    .zip(val(a))
                    .map(|(&x, &v)| if v < c { x } else { T::zero() });
                accumulate(grads, a, g.len(), it);
            }
            Op::Clamp(a, lo, hi) => {
                let it = g
                    .iter()
                    .zip(val(a))
                    .map(|(&x, &v)| if v > lo && v < hi { x } else { T::zero() });
                accumulate(grads, a, g.len(), it);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                ref spec,
                ref geom,
            } => {
                let (li, lw, lb) = (val(input).len(), val(weight).len(), val(bias).len());
                // Three disjoint slots; take them out to borrow mutably at once.
                let mut gi = want(input).then(|| take_slot(grads, input, li));
                let mut gw = want(weight).then(|| take_slot(grads, weight, lw));
                let mut gb = want(bias).then(|| take_slot(grads, bias, lb));
                conv::backward(
                    spec,
                    geom,
                    val(input),
                    val(weight),
                    g,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                for (v, buf) in [(input, gi), (weight, gw), (bias, gb)] {
                    if let Some(buf) = buf {
                        grads[v.0] = Some(buf);
                    }
                }
            }
            Op::Concat(ref parts) => {
                let d = out.shape().dims();
                let (n, total, hw) = (d[0], d[1], d[2] * d[3]);
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).dims()[1];
                    if want(p) {
                        let dst = slot(grads, p, n * pc * hw);
                        for b in 0..n {
                            let src = &g[(b * total + offset) * hw..(b * total + offset + pc) * hw];
                            for (d, &x) in dst[b * pc * hw..(b + 1) * pc * hw].iter_mut().zip(src) {
                                *d = *d + x;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceChannels { src, start } => {
                let d = self.shape(src).dims();
                let (n, c, hw) = (d[0], d[1], d[2] * d[3]);
                let len = out.shape().dims()[1];
                let dst = slot(grads, src, n * c * hw);
                for b in 0..n {
                    let base = (b * c + start) * hw;
                    for (d, &x) in dst[base..base + len * hw]
                        .iter_mut()
                        .zip(&g[b * len * hw..(b + 1) * len * hw])
                    {
                        *d = *d + x;
                    }
                }
            }
            Op::Upsample(a, factor) => {
                let d = self.shape(a).dims();
                let (h, w) = (d[2], d[3]);
                let (oh, ow) = (h * factor, w * factor);
                let dst = slot(grads, a, val(a).len());
                for (plane, src) in dst.chunks_exact_mut(h * w).zip(g.chunks_exact(oh * ow)) {
                    for y in 0..oh {
                        let row = &mut plane[(y / factor) * w..(y / factor + 1) * w];
                        for (x, &v) in src[y * ow..(y + 1) * ow].iter().enumerate() {
                            row[x / factor] = row[x / factor] + v;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let n = val(a).len();
                accumulate(grads, a, n, core::iter::repeat_n(g[0], n));
            }
            Op::SumSquares(a) => {
                let two = T::one() + T::one();
                let it = val(a).iter().map(|&x| two * x * g[0]);
                accumulate(grads, a, val(a).len(), it);
            }
            Op::SquaredDistance(a, b) => {
                let two = T::one() + T::one();
                let diff = || val(a).iter().zip(val(b)).map(|(&x, &y)| two * (x - y) * g[0]);
                if want(a) {
                    accumulate(grads, a, val(a).len(), diff());
                }
                if want(b) {
                    accumulate(grads, b, val(b).len(), diff().map(|x| -x));
                }
            }
            Op::Blend {
                weight,
                current,
                previous,
            } => {
                let (w, h, p) = (val(weight), val(current), val(previous));
                if want(weight) {
                    let it = g.iter().zip(h.iter().zip(p)).map(|(&x, (&h, &p))| x * (h - p));
                    accumulate(grads, weight, w.len(), it);
                }
                if want(current) {
                    accumulate(grads, current, h.len(), g.iter().zip(w).map(|(&x, &w)| x * w));
                }
                if want(previous) {
                    let it = g.iter().zip(w).map(|(&x, &w)| x * (T::one() - w));
                    accumulate(grads, previous, p.len(), it);
                }
            }
        }
    }
}

fn take_slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> Vec<T> {
    grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len])
}
