//! Elementwise, broadcasting and shape ops.

use std::sync::Arc;

use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::Scalar;

/// Maps an output flat index to the flat index of a (possibly broadcast) input.
#[derive(Clone)]
enum IndexMap {
    Identity,
    Scalar,
    Gather(Arc<Vec<usize>>),
}

impl IndexMap {
    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            IndexMap::Identity => i,
            IndexMap::Scalar => 0,
            IndexMap::Gather(idx) => idx[i],
        }
    }

    fn new(in_shape: &[usize], out_shape: &[usize]) -> Self {
        if in_shape == out_shape {
            return IndexMap::Identity;
        }
        if numel(in_shape) == 1 {
            return IndexMap::Scalar;
        }
        // Strides of the input aligned to the trailing dims of the output;
        // broadcast dims get stride 0.
        let rank = out_shape.len();
        let offset = rank - in_shape.len();
        let mut strides = vec![0usize; rank];
        let mut s = 1;
        for d in (0..in_shape.len()).rev() {
            strides[d + offset] = if in_shape[d] == 1 { 0 } else { s };
            s *= in_shape[d];
        }
        let total = numel(out_shape);
        let mut idx = Vec::with_capacity(total);
        let mut counter = vec![0usize; rank];
        let mut flat = 0usize;
        for _ in 0..total {
            idx.push(flat);
            for d in (0..rank).rev() {
                counter[d] += 1;
                flat += strides[d];
                if counter[d] < out_shape[d] {
                    break;
                }
                flat -= strides[d] * counter[d];
                counter[d] = 0;
            }
        }
        IndexMap::Gather(Arc::new(idx))
    }
}

/// Trailing-dimension broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

impl<T: Scalar> Tensor<T> {
    fn binary(
        &self,
        rhs: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        da: impl Fn(T, T) -> T + Send + Sync + 'static,
        db: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Result<Tensor<T>> {
        let out_shape = broadcast_shape(self.shape(), rhs.shape()).ok_or_else(|| Error::ShapeMismatch {
            op,
            lhs: self.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        })?;
        let ma = IndexMap::new(self.shape(), &out_shape);
        let mb = IndexMap::new(rhs.shape(), &out_shape);
        let a = self.to_vec();
        let b = rhs.to_vec();
        let n = numel(&out_shape);
        let out: Vec<T> = (0..n).map(|i| f(a[ma.at(i)], b[mb.at(i)])).collect();
        let (na, nb) = (a.len(), b.len());
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, need| {
                let ga = need[0].then(|| {
                    let mut acc = vec![T::zero(); na];
                    for (i, &gi) in g.iter().enumerate() {
                        let (ia, ib) = (ma.at(i), mb.at(i));
                        acc[ia] = acc[ia] + gi * da(a[ia], b[ib]);
                    }
                    acc
                });
                let gb = need[1].then(|| {
                    let mut acc = vec![T::zero(); nb];
                    for (i, &gi) in g.iter().enumerate() {
                        let (ia, ib) = (ma.at(i), mb.at(i));
                        acc[ib] = acc[ib] + gi * db(a[ia], b[ib]);
                    }
                    acc
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `df(x, y)` receives the input and output value.
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + Send + Sync + 'static) -> Tensor<T> {
        let x = self.to_vec();
        let y: Vec<T> = x.iter().map(|&v| f(v)).collect();
        let y_saved = y.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(x.iter().zip(&y_saved))
                    .map(|(&gi, (&xi, &yi))| gi * df(xi, yi))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "add", |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "sub", |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "div", |a, b| a / b, |_, b| T::one() / b, |a, b| -a / (b * b))
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary(|x| x + c, |_, _| T::one())
    }

    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        self.unary(|x| x * c, move |_, _| c)
    }

    pub fn div_scalar(&self, c: T) -> Tensor<T> {
        self.unary(move |x| x / c, move |_, _| T::one() / c)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.mul_scalar(-T::one())
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor<T> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    /// `2^x`.
    pub fn pow2(&self) -> Tensor<T> {
        self.unary(|x| x.exp2(), |_, y| T::LN_2() * y)
    }

    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Elementwise clamp to `[lo, hi]`. The gradient is 1 on the closed
    /// interval (boundary included) and 0 outside.
    pub fn clamp(&self, lo: T, hi: T) -> Result<Tensor<T>> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!("clamp: lo {lo} > hi {hi}")));
        }
        Ok(self.unary(
            move |x| x.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        ))
    }

    /// Clamp with differentiable single-element bounds. Elements strictly
    /// below `lo` (above `hi`) pass their gradient to `lo` (`hi`); elements
    /// on the closed interval keep it.
    pub fn clamp_between(&self, lo: &Tensor<T>, hi: &Tensor<T>) -> Result<Tensor<T>> {
        if lo.numel() != 1 || hi.numel() != 1 {
            return Err(Error::InvalidArgument(
                "clamp_between: bounds must be single-element tensors".into(),
            ));
        }
        let (l, h) = (lo.item(), hi.item());
        if l > h {
            return Err(Error::InvalidArgument(format!("clamp: lo {l} > hi {h}")));
        }
        let x = self.to_vec();
        let y: Vec<T> = x.iter().map(|&v| v.max(l).min(h)).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone(), lo.clone(), hi.clone()],
            Box::new(move |g, need| {
                let mut gx = vec![T::zero(); x.len()];
                let (mut glo, mut ghi) = (T::zero(), T::zero());
                for (i, (&gi, &xi)) in g.iter().zip(&x).enumerate() {
                    if xi < l {
                        glo = glo + gi;
                    } else if xi > h {
                        ghi = ghi + gi;
                    } else {
                        gx[i] = gi;
                    }
                }
                vec![need[0].then_some(gx), need[1].then(|| vec![glo]), need[2].then(|| vec![ghi])]
            }),
        ))
    }

    /// Rounds half away from zero; the backward pass is the identity.
    pub fn round_ste(&self) -> Tensor<T> {
        self.unary(|x| x.round(), |_, _| T::one())
    }

    pub fn sum(&self) -> Tensor<T> {
        let n = self.numel();
        let s = self.data().iter().copied().sum();
        Tensor::from_op(
            Vec::new(),
            vec![s],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let scale = T::one() / T::from_usize_lossy(n);
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(
            Vec::new(),
            vec![s * scale],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0] * scale; n])]),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    pub fn transpose2d(&self) -> Result<Tensor<T>> {
        let &[r, c] = self.shape() else {
            return Err(Error::InvalidArgument(format!(
                "transpose2d expects a matrix, got {:?}",
                self.shape()
            )));
        };
        let x = self.data();
        let mut y = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                y[j * r + i] = x[i * c + j];
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            vec![c, r],
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[j * r + i];
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Inverse of softplus for positive `y`.
pub(crate) fn softplus_inv<T: Scalar>(y: T) -> T {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}
