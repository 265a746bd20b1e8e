//! Fused network ops: products, convolution, normalization, losses.

use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// Batch-norm forward result; the batch statistics feed running averages.
pub struct BatchNormOutput<T: Scalar> {
    pub output: Tensor<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (&[m, k], &[k2, n]) = (self.shape(), rhs.shape()) else {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let a = self.to_vec();
        let b = rhs.to_vec();
        let out = matmul_raw(&a, &b, m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, need| {
                // dA = G Bᵀ, dB = Aᵀ G
                let ga = need[0].then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &b[p * n..(p + 1) * n];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    ga
                });
                let gb = need[1].then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = a[i * k + p];
                            let dst = &mut gb[p * n..(p + 1) * n];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d = *d + av * gv;
                            }
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Dense layer `x · wᵀ` with `x: [N, in]` and `w: [out, in]`.
    pub fn linear(&self, weight: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul(&weight.transpose2d()?)
    }

    /// Cross-correlation via im2col. `self: [N, C, H, W]`, `w: [F, C, kh, kw]`.
    pub fn conv2d(&self, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let (&[n, c, h, wd], &[f, c2, kh, kw]) = (self.shape(), w.shape()) else {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        };
        if c != c2 || kh > h + 2 * pad || kw > wd + 2 * pad {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be positive".into()));
        }
        let (oh, ow) = conv_out_extent(h, wd, kh, kw, stride, pad)?;
        let geo = ConvGeometry {
            c,
            h,
            w: wd,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        };
        // Per sample: out[F, P] = W[F, CK] · cols[CK, P].
        let (ck, pp) = (c * kh * kw, oh * ow);
        let x = self.to_vec();
        let wv = w.to_vec();
        let mut cols = vec![T::zero(); n * ck * pp];
        let mut out = Vec::with_capacity(n * f * pp);
        for b in 0..n {
            let cb = &mut cols[b * ck * pp..(b + 1) * ck * pp];
            geo.im2col(&x[b * c * h * wd..(b + 1) * c * h * wd], cb);
            out.extend(matmul_raw(&wv, cb, f, ck, pp));
        }
        Ok(Tensor::from_op(
            vec![n, f, oh, ow],
            out,
            vec![self.clone(), w.clone()],
            Box::new(move |g, need| {
                let gx = need[0].then(|| {
                    let mut gx = vec![T::zero(); n * c * h * wd];
                    let mut gcols = vec![T::zero(); ck * pp];
                    for b in 0..n {
                        gcols.iter_mut().for_each(|v| *v = T::zero());
                        // gcols = Wᵀ · G
                        let gb = &g[b * f * pp..(b + 1) * f * pp];
                        for fo in 0..f {
                            let grow = &gb[fo * pp..(fo + 1) * pp];
                            for r in 0..ck {
                                let wval = wv[fo * ck + r];
                                if wval == T::zero() {
                                    continue;
                                }
                                for (d, &gv) in gcols[r * pp..(r + 1) * pp].iter_mut().zip(grow) {
                                    *d = *d + wval * gv;
                                }
                            }
                        }
                        geo.col2im(&gcols, &mut gx[b * c * h * wd..(b + 1) * c * h * wd]);
                    }
                    gx
                });
                let gw = need[1].then(|| {
                    // gW = Σ_b G_b · cols_bᵀ
                    let mut gw = vec![T::zero(); f * ck];
                    for b in 0..n {
                        let gb = &g[b * f * pp..(b + 1) * f * pp];
                        let cb = &cols[b * ck * pp..(b + 1) * ck * pp];
                        for fo in 0..f {
                            let grow = &gb[fo * pp..(fo + 1) * pp];
                            for r in 0..ck {
                                let crow = &cb[r * pp..(r + 1) * pp];
                                let s: T = grow.iter().zip(crow).map(|(&a, &b)| a * b).sum();
                                gw[fo * ck + r] = gw[fo * ck + r] + s;
                            }
                        }
                    }
                    gw
                });
                vec![gx, gw]
            }),
        ))
    }

    /// `[N, C, H, W] -> [N, C]` by spatial averaging.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        let &[n, c, h, w] = self.shape() else {
            return Err(Error::InvalidArgument(format!(
                "global_avg_pool expects NCHW, got {:?}",
                self.shape()
            )));
        };
        let hw = h * w;
        let scale = T::one() / T::from_usize_lossy(hw);
        let x = self.data();
        let out: Vec<T> = x.chunks(hw).map(|plane| plane.iter().copied().sum::<T>() * scale).collect();
        drop(x);
        Ok(Tensor::from_op(
            vec![n, c],
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = Vec::with_capacity(n * c * hw);
                for &gi in g {
                    gx.extend(std::iter::repeat_n(gi * scale, hw));
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Per-channel normalization over `[N, C]` or `[N, C, H, W]`.
    ///
    /// With `running = None` batch statistics are used (training); otherwise
    /// the supplied `(mean, var)` are treated as constants (evaluation).
    pub fn batch_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, running: Option<(&[T], &[T])>, eps: T) -> Result<BatchNormOutput<T>> {
        let shape = self.shape().to_vec();
        let (n, c, inner) = match *shape.as_slice() {
            [n, c] => (n, c, 1),
            [n, c, h, w] => (n, c, h * w),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "batch_norm expects [N,C] or [N,C,H,W], got {shape:?}"
                )))
            }
        };
        if gamma.numel() != c || beta.numel() != c {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                lhs: shape,
                rhs: gamma.shape().to_vec(),
            });
        }
        let x = self.to_vec();
        let m = n * inner;
        let mf = T::from_usize_lossy(m);
        let idx = move |b: usize, ch: usize, j: usize| (b * c + ch) * inner + j;

        let (mean, var) = match running {
            Some((rm, rv)) => (rm.to_vec(), rv.to_vec()),
            None => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        for j in 0..inner {
                            s = s + x[idx(b, ch, j)];
                        }
                    }
                    let mu = s / mf;
                    let mut v = T::zero();
                    for b in 0..n {
                        for j in 0..inner {
                            let d = x[idx(b, ch, j)] - mu;
                            v = v + d * d;
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = v / mf;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = gamma.to_vec();
        let bv = beta.to_vec();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                for j in 0..inner {
                    let i = idx(b, ch, j);
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    out[i] = gv[ch] * xhat[i] + bv[ch];
                }
            }
        }
        let batch_stats = running.is_none();
        let output = Tensor::from_op(
            shape,
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, need| {
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        for j in 0..inner {
                            let i = idx(b, ch, j);
                            sum_g[ch] = sum_g[ch] + g[i];
                            sum_gx[ch] = sum_gx[ch] + g[i] * xhat[i];
                        }
                    }
                }
                let gx = need[0].then(|| {
                    let mut gx = vec![T::zero(); g.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let k = gv[ch] * inv_std[ch];
                            for j in 0..inner {
                                let i = idx(b, ch, j);
                                gx[i] = if batch_stats {
                                    k * (g[i] - sum_g[ch] / mf - xhat[i] * sum_gx[ch] / mf)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                    gx
                });
                vec![gx, need[1].then_some(sum_gx), need[2].then_some(sum_g)]
            }),
        );
        Ok(BatchNormOutput {
            output,
            batch_mean: mean,
            batch_var: var,
        })
    }

    /// Mean cross-entropy of `[N, C]` logits against class indices.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let &[n, c] = self.shape() else {
            return Err(Error::InvalidArgument(format!(
                "softmax_cross_entropy expects [N, C] logits, got {:?}",
                self.shape()
            )));
        };
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: self.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {c} classes")));
        }
        let z = self.to_vec();
        let mut probs = vec![T::zero(); n * c];
        let mut loss = T::zero();
        for i in 0..n {
            let row = &z[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let s: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + s.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            loss = loss + lse - row[labels[i]];
        }
        let nf = T::from_usize_lossy(n);
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            Vec::new(),
            vec![loss / nf],
            vec![self.clone()],
            Box::new(move |g, _| {
                let scale = g[0] / nf;
                let mut gz = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    gz[i * c + l] = gz[i * c + l] - T::one();
                }
                gz.iter_mut().for_each(|v| *v = *v * scale);
                vec![Some(gz)]
            }),
        ))
    }

    /// Mean squared error.
    pub fn mse(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "mse",
                lhs: self.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        Ok(self.sub(target)?.square().mean())
    }

    /// Sum of elementwise Huber losses: `0.5 x²` for `|x| ≤ δ`, else `δ(|x| − δ/2)`.
    pub fn huber(&self, delta: T) -> Result<Tensor<T>> {
        if !(delta > T::zero()) {
            return Err(Error::InvalidArgument(format!("huber: delta must be > 0, got {delta}")));
        }
        let x = self.to_vec();
        let half = T::lit(0.5);
        let s: T = x
            .iter()
            .map(|&v| {
                if v.abs() <= delta {
                    half * v * v
                } else {
                    delta * (v.abs() - half * delta)
                }
            })
            .sum();
        Ok(Tensor::from_op(
            Vec::new(),
            vec![s],
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = x
                    .iter()
                    .map(|&v| g[0] * if v.abs() <= delta { v } else { delta * v.signum() })
                    .collect();
                vec![Some(gx)]
            }),
        ))
    }
}

/// Output extent of a convolution; rejects geometries whose window does not
/// tile the padded input exactly.
pub fn conv_out_extent(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<(usize, usize)> {
    let (sh, sw) = (h + 2 * pad, w + 2 * pad);
    if kh > sh || kw > sw || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d: kernel {kh}x{kw} does not fit padded input {sh}x{sw}"
        )));
    }
    if !(sh - kh).is_multiple_of(stride) || !(sw - kw).is_multiple_of(stride) {
        return Err(Error::InvalidArgument(format!(
            "conv2d: non-integral output extent for input {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}"
        )));
    }
    Ok(((sh - kh) / stride + 1, (sw - kw) / stride + 1))
}

#[derive(Clone, Copy)]
struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    /// Visits `(row, p, input_index)` for every in-bounds tap of one sample,
    /// where `row` indexes `(channel, ky, kx)` and `p` the output position.
    #[inline]
    fn for_each_tap(&self, mut tap: impl FnMut(usize, usize, usize)) {
        let ConvGeometry {
            c,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        } = *self;
        for ch in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (ch * kh + ky) * kw + kx;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = (ch * h + iy as usize) * w;
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            tap(row, oy * ow + ox, xrow + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let pp = self.oh * self.ow;
        self.for_each_tap(|r, p, xi| cols[r * pp + p] = x[xi]);
    }

    fn col2im<T: Scalar>(&self, cols: &[T], gx: &mut [T]) {
        let pp = self.oh * self.ow;
        self.for_each_tap(|r, p, xi| gx[xi] = gx[xi] + cols[r * pp + p]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tensor::finite_difference_check;

    #[test]
    fn matmul_identity_and_hand_case() {
        let i = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(i.matmul(&b).unwrap().to_vec(), vec![3.0, 4.0, 5.0, 6.0]);
        let r = Tensor::<f32>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let col = Tensor::<f32>::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(r.matmul(&col).unwrap().to_vec(), vec![11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn conv_of_ones_sums_window() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let y = x.conv2d(&w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.to_vec(), vec![9.0]);
    }

    #[test]
    fn delta_kernel_reproduces_input() {
        let data: Vec<f32> = (0..2 * 5 * 5).map(|i| i as f32 * 0.1 - 1.0).collect();
        let x = Tensor::from_vec(&[2, 1, 5, 5], data.clone()).unwrap();
        let mut k = vec![0.0f32; 9];
        k[4] = 1.0;
        let w = Tensor::from_vec(&[1, 1, 3, 3], k).unwrap();
        assert_eq!(x.conv2d(&w, 1, 1).unwrap().to_vec(), data);
    }

    #[test]
    fn conv_rejects_non_integral_extent() {
        let x = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(x.conv2d(&w, 2, 1).is_err());
        assert!(x.conv2d(&w, 1, 1).is_ok());
        let big = Tensor::<f32>::zeros(&[1, 1, 11, 11]);
        assert!(x.conv2d(&big, 1, 1).is_err());
    }

    fn naive_conv(
        x: &[f64],
        w: &[f64],
        (n, c, h, wd): (usize, usize, usize, usize),
        (f, k): (usize, usize),
        s: usize,
        p: usize,
    ) -> Vec<f64> {
        let (oh, ow) = conv_out_extent(h, wd, k, k, s, p).unwrap();
        let mut out = vec![0.0; n * f * oh * ow];
        for b in 0..n {
            for fo in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ch in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc +=
                                            x[((b * c + ch) * h + iy as usize) * wd + ix as usize] * w[((fo * c + ch) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        out[((b * f + fo) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = RngStream::new(11, 0);
        for &(s, p, hw) in &[(1, 1, 5), (2, 1, 5), (1, 0, 4), (2, 0, 7)] {
            let x = rng.normal_vec(2 * 3 * hw * hw);
            let w = rng.normal_vec(4 * 3 * 9);
            let xt = Tensor::from_vec(&[2, 3, hw, hw], x.clone()).unwrap();
            let wt = Tensor::from_vec(&[4, 3, 3, 3], w.clone()).unwrap();
            let got = xt.conv2d(&wt, s, p).unwrap().to_vec();
            let want = naive_conv(&x, &w, (2, 3, hw, hw), (4, 3), s, p);
            let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "stride {s} pad {p}: {err}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = RngStream::new(12, 0);
        for &(s, p) in &[(1, 1), (2, 1), (1, 0)] {
            let x = Tensor::param(&[2, 2, 5, 5], rng.normal_vec(100)).unwrap();
            let w = Tensor::param(&[3, 2, 3, 3], rng.normal_vec(54)).unwrap();
            let mix = Tensor::from_vec(&[1], vec![0.7]).unwrap();
            let f = || Ok(x.conv2d(&w, s, p)?.square().sum().mul(&mix)?.sum());
            let err = finite_difference_check(f, &[x.clone(), w.clone()], 1e-5).unwrap();
            assert!(err < 1e-6, "stride {s} pad {p}: {err}");
        }
    }

    #[test]
    fn dense_ops_match_finite_differences() {
        let mut rng = RngStream::new(13, 0);
        let x = Tensor::param(&[4, 3], rng.normal_vec(12)).unwrap();
        let w = Tensor::param(&[5, 3], rng.normal_vec(15)).unwrap();
        let gamma = Tensor::param(&[5], rng.normal_vec(5)).unwrap();
        let beta = Tensor::param(&[5], rng.normal_vec(5)).unwrap();
        let f = || {
            let z = x.linear(&w)?;
            let bn = z.batch_norm(&gamma, &beta, None, 1e-5)?.output;
            bn.softmax_cross_entropy(&[0, 4, 2, 2])
        };
        let err = finite_difference_check(f, &[x.clone(), w.clone(), gamma.clone(), beta.clone()], 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
        let img = Tensor::param(&[2, 3, 2, 2], rng.normal_vec(24)).unwrap();
        let f = || img.global_avg_pool()?.square().sum().add(&img.huber(0.5)?);
        assert!(finite_difference_check(f, std::slice::from_ref(&img), 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn huber_values() {
        let h = |x: f64| Tensor::scalar(x).huber(1.0).unwrap().item();
        assert_eq!(h(0.0), 0.0);
        assert_eq!(h(0.5), 0.125);
        assert_eq!(h(2.0), 1.5);
        assert_eq!(h(-2.0), 1.5);
        assert!(Tensor::<f64>::scalar(1.0).huber(0.0).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let z = Tensor::<f64>::zeros(&[2, 4]);
        let l = z.softmax_cross_entropy(&[0, 3]).unwrap().item();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(z.softmax_cross_entropy(&[0, 4]).is_err());
    }

    #[test]
    fn batch_norm_normalizes_batch() {
        let x = Tensor::<f64>::from_vec(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = x.batch_norm(&Tensor::ones(&[1]), &Tensor::zeros(&[1]), None, 0.0).unwrap();
        assert_eq!(out.batch_mean, vec![2.5]);
        assert_eq!(out.batch_var, vec![1.25]);
        let y = out.output.to_vec();
        assert!(y.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn global_pool_averages_planes() {
        let x = Tensor::<f32>::from_vec(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 8.0]).unwrap();
        assert_eq!(x.global_avg_pool().unwrap().to_vec(), vec![2.5, 2.0]);
    }
}
