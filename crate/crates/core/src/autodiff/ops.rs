use super::{Broadcast, Graph, Op, Var};
use crate::error::TensorError;
use crate::tensor::kernels::{self, ConvGeom};
use crate::tensor::{Scalar, Tensor};

/// Stabiliser inside `sqrt(var + EPS)` wherever a standard deviation divides.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }
}

/// Reductions use population statistics (divisor `n`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Std,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<(), TensorError> {
    if shape.len() != rank {
        return Err(TensorError::Unsupported {
            what: op,
            value: format!("rank-{} input {:?}, expected rank {rank}", shape.len(), shape),
        });
    }
    Ok(())
}

/// For a reduction over `axes`, the output shape and, for every input flat
/// index, the flat index of the output element it contributes to.
pub(crate) fn reduce_index_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect();
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        let mut o = 0;
        for (ax, &i) in idx.iter().enumerate() {
            if !axes.contains(&ax) {
                o = o * shape[ax] + i;
            }
        }
        map.push(o);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, map)
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log σ(x) = min(x, 0) − ln(1 + e^{−|x|})`, finite for every finite `x`.
pub(crate) fn log_sigmoid<T: Scalar>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Graph<T> {
    /// Elementwise binary op. `b` may match `a`'s shape, hold a single
    /// element, or match a trailing suffix of `a`'s shape.
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let bcast = if av.shape() == bv.shape() {
            Broadcast::Same
        } else if bv.len() == 1 {
            Broadcast::Scalar
        } else if bv.rank() <= av.rank() && av.shape().ends_with(bv.shape()) {
            Broadcast::Trailing
        } else {
            return Err(mismatch("elementwise", av.shape(), bv.shape()));
        };
        let bd = bv.data();
        let blen = bd.len();
        let data: Vec<T> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| kind.apply(x, bd[i % blen]))
            .collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        Ok(self.push_op(value, Op::Binary { kind, a, b, bcast }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v + s);
        self.push_op(value, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push_op(value, Op::MulScalar(x, s))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.mul_scalar(x, -T::one())
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(mismatch("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(m, k, n, T::one(), av.data(), false, bv.data(), false, T::zero(), &mut out);
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push_op(value, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        expect_rank("transpose", xv.shape(), 2)?;
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let d = xv.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let value = Tensor::from_parts(vec![c, r], out);
        Ok(self.push_op(value, Op::Transpose(x)))
    }

    /// Cross-correlation of `x: [N,C,H,W]` with `w: [O,C,kh,kw]` plus an
    /// optional per-output-channel bias.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let (xv, wv) = (self.value(x), self.value(w));
        expect_rank("conv2d input", xv.shape(), 4)?;
        expect_rank("conv2d weight", wv.shape(), 4)?;
        let (n, c, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (o, wc, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        if c != wc {
            return Err(mismatch("conv2d channels", xv.shape(), wv.shape()));
        }
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(TensorError::Unsupported {
                what: "conv2d geometry",
                value: format!("input {:?}, kernel {kh}x{kw}, stride {stride}, pad {pad}", xv.shape()),
            });
        }
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [o] {
                return Err(mismatch("conv2d bias", wv.shape(), bv.shape()));
            }
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
        };
        let out = kernels::conv2d_forward(
            xv.data(),
            n,
            &geom,
            wv.data(),
            o,
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_parts(vec![n, o, geom.out_height(), geom.out_width()], out);
        Ok(self.push_op(value, Op::Conv2d { x, w, bias, geom }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        self.push_op(value, Op::LeakyRelu(x, slope))
    }

    /// ×2 spatial upsampling of an NCHW tensor.
    pub fn upsample2(&mut self, x: Var, mode: UpsampleMode) -> Result<Var, TensorError> {
        let xv = self.value(x);
        expect_rank("upsample", xv.shape(), 4)?;
        let s = xv.shape();
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let out = match mode {
            UpsampleMode::Nearest => kernels::upsample_nearest2(xv.data(), planes, h, w),
            UpsampleMode::Bilinear => kernels::upsample_bilinear2(xv.data(), planes, h, w),
        };
        let value = Tensor::from_parts(vec![s[0], s[1], 2 * h, 2 * w], out);
        Ok(self.push_op(value, Op::Upsample(x, mode)))
    }

    /// Upsampling by an arbitrary factor; only 2 is supported.
    pub fn upsample(&mut self, x: Var, factor: usize, mode: UpsampleMode) -> Result<Var, TensorError> {
        if factor != 2 {
            return Err(TensorError::Unsupported {
                what: "upsample factor",
                value: factor.to_string(),
            });
        }
        self.upsample2(x, mode)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        expect_rank("avg_pool2", xv.shape(), 4)?;
        let s = xv.shape();
        if s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(TensorError::Unsupported {
                what: "avg_pool2 spatial size",
                value: format!("{:?}", s),
            });
        }
        let out = kernels::avg_pool2(xv.data(), s[0] * s[1], s[2], s[3]);
        let value = Tensor::from_parts(vec![s[0], s[1], s[2] / 2, s[3] / 2], out);
        Ok(self.push_op(value, Op::AvgPool2(x)))
    }

    /// Reduces over `axes`, removing them from the shape. Reducing every axis
    /// yields a scalar (empty shape).
    pub fn reduce(&mut self, kind: ReduceKind, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if axes.is_empty() {
            return Err(TensorError::EmptyInput("reduce axes"));
        }
        for &a in axes {
            if a >= xv.rank() {
                return Err(TensorError::InvalidAxis { axis: a, rank: xv.rank() });
            }
        }
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        let (out_shape, map) = reduce_index_map(xv.shape(), &axes);
        let out_len: usize = out_shape.iter().product();
        let count = (xv.len() / out_len) as f64;
        let mut sums = vec![0.0f64; out_len];
        for (&o, v) in map.iter().zip(xv.data()) {
            sums[o] += v.as_f64();
        }
        let out: Vec<T> = match kind {
            ReduceKind::Sum => sums.iter().map(|&s| T::of(s)).collect(),
            ReduceKind::Mean => sums.iter().map(|&s| T::of(s / count)).collect(),
            ReduceKind::Std => {
                let means: Vec<f64> = sums.iter().map(|s| s / count).collect();
                let mut sq = vec![0.0f64; out_len];
                for (&o, v) in map.iter().zip(xv.data()) {
                    let d = v.as_f64() - means[o];
                    sq[o] += d * d;
                }
                sq.iter().map(|&s| T::of((s / count).sqrt())).collect()
            }
        };
        let value = Tensor::from_parts(out_shape, out);
        Ok(self.push_op(value, Op::Reduce { kind, x, axes }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        if axes.is_empty() {
            return x;
        }
        self.reduce(ReduceKind::Sum, x, &axes).expect("valid axes")
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        if axes.is_empty() {
            return x;
        }
        self.reduce(ReduceKind::Mean, x, &axes).expect("valid axes")
    }

    /// Normalises each `[n, c]` plane of an NCHW tensor to zero mean and unit
    /// standard deviation, with `σ = sqrt(var + NORM_EPS)`.
    pub fn instance_norm(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        expect_rank("instance_norm", xv.shape(), 4)?;
        let s = xv.shape();
        let plane = s[2] * s[3];
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(s[0] * s[1]);
        for (src, dst) in xv.data().chunks(plane).zip(out.chunks_mut(plane)) {
            let (mean, var) = kernels::moments(src);
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for (d, v) in dst.iter_mut().zip(src) {
                *d = T::of((v.as_f64() - mean) * inv);
            }
            inv_std.push(T::of(inv));
        }
        let value = Tensor::from_parts(s.to_vec(), out);
        Ok(self.push_op(value, Op::InstanceNorm { x, inv_std }))
    }

    /// `x * scale + shift` per channel of an NCHW tensor. `scale` and `shift`
    /// are `[N, C]` (per sample) or `[C]` (shared).
    pub fn channel_affine(
        &mut self,
        x: Var,
        scale: Option<Var>,
        shift: Option<Var>,
    ) -> Result<Var, TensorError> {
        let xv = self.value(x);
        expect_rank("channel_affine", xv.shape(), 4)?;
        let s = xv.shape().to_vec();
        let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
        let lookup = |v: Option<Var>| -> Result<Option<(&[T], bool)>, TensorError> {
            match v {
                None => Ok(None),
                Some(v) => {
                    let t = self.value(v);
                    if t.shape() == [n, c] {
                        Ok(Some((t.data(), true)))
                    } else if t.shape() == [c] {
                        Ok(Some((t.data(), false)))
                    } else {
                        Err(mismatch("channel_affine", &s, t.shape()))
                    }
                }
            }
        };
        let sc = lookup(scale)?;
        let sh = lookup(shift)?;
        let mut out = xv.data().to_vec();
        for (k, chunk) in out.chunks_mut(plane).enumerate() {
            let (ni, ci) = (k / c, k % c);
            let a = sc.map_or(T::one(), |(d, per)| d[if per { ni * c + ci } else { ci }]);
            let b = sh.map_or(T::zero(), |(d, per)| d[if per { ni * c + ci } else { ci }]);
            for v in chunk.iter_mut() {
                *v = *v * a + b;
            }
        }
        let value = Tensor::from_parts(s, out);
        Ok(self.push_op(value, Op::ChannelAffine { x, scale, shift }))
    }

    /// `x + strength[c] · noise[n, 0]` with `noise: [N,1,H,W]` and
    /// `strength: [C]`.
    pub fn inject_noise(&mut self, x: Var, strength: Var, noise: Tensor<T>) -> Result<Var, TensorError> {
        let (xv, sv) = (self.value(x), self.value(strength));
        expect_rank("inject_noise", xv.shape(), 4)?;
        let s = xv.shape().to_vec();
        let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
        if sv.shape() != [c] {
            return Err(mismatch("inject_noise strength", &s, sv.shape()));
        }
        if noise.shape() != [n, 1, s[2], s[3]] {
            return Err(mismatch("inject_noise noise", &s, noise.shape()));
        }
        let mut out = xv.data().to_vec();
        let (nd, sd) = (noise.data(), sv.data());
        for (k, chunk) in out.chunks_mut(plane).enumerate() {
            let (ni, ci) = (k / c, k % c);
            let src = &nd[ni * plane..(ni + 1) * plane];
            let a = sd[ci];
            for (v, z) in chunk.iter_mut().zip(src) {
                *v += a * *z;
            }
        }
        let value = Tensor::from_parts(s, out);
        Ok(self.push_op(value, Op::InjectNoise { x, strength, noise }))
    }

    /// Row-wise `x / sqrt(mean(x²) + NORM_EPS)` on `[N, D]`.
    pub fn pixel_norm(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        expect_rank("pixel_norm", xv.shape(), 2)?;
        let d = xv.shape()[1];
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_rms = Vec::with_capacity(xv.shape()[0]);
        for (src, dst) in xv.data().chunks(d).zip(out.chunks_mut(d)) {
            let ms = src.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + NORM_EPS).sqrt();
            for (o, v) in dst.iter_mut().zip(src) {
                *o = T::of(v.as_f64() * inv);
            }
            inv_rms.push(T::of(inv));
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        Ok(self.push_op(value, Op::PixelNorm { x, inv_rms }))
    }

    /// Appends one feature map holding, for each group of `group` consecutive
    /// samples, the mean over (C,H,W) of the per-location population standard
    /// deviation across the group.
    pub fn minibatch_stddev(&mut self, x: Var, group: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        expect_rank("minibatch_stddev", xv.shape(), 4)?;
        let s = xv.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if group == 0 || n % group != 0 {
            return Err(TensorError::Unsupported {
                what: "minibatch_stddev group",
                value: format!("batch {n} not divisible by group {group}"),
            });
        }
        let sample = c * h * w;
        let plane = h * w;
        let d = xv.data();
        let mut out = vec![T::zero(); n * (c + 1) * plane];
        for gi in 0..n / group {
            let members = gi * group..(gi + 1) * group;
            let mut acc = 0.0f64;
            for loc in 0..sample {
                let vals = members.clone().map(|m| d[m * sample + loc].as_f64());
                let mean = vals.clone().sum::<f64>() / group as f64;
                let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / group as f64;
                acc += var.sqrt();
            }
            let stat = T::of(acc / sample as f64);
            for m in members {
                let dst = &mut out[m * (c + 1) * plane..(m + 1) * (c + 1) * plane];
                dst[..sample].copy_from_slice(&d[m * sample..(m + 1) * sample]);
                dst[sample..].fill(stat);
            }
        }
        let value = Tensor::from_parts(vec![n, c + 1, h, w], out);
        Ok(self.push_op(value, Op::MinibatchStddev { x, group }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push_op(value, Op::Sigmoid(x))
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(log_sigmoid);
        self.push_op(value, Op::LogSigmoid(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push_op(value, Op::Reshape(x)))
    }

    /// Stacks `n` copies of `x` along a new leading axis.
    pub fn repeat_batch(&mut self, x: Var, n: usize) -> Result<Var, TensorError> {
        if n == 0 {
            return Err(TensorError::EmptyInput("repeat_batch"));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(xv.len() * n);
        for _ in 0..n {
            data.extend_from_slice(xv.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(xv.shape());
        let value = Tensor::from_parts(shape, data);
        Ok(self.push_op(value, Op::RepeatBatch(x)))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(TensorError::InvalidAxis { axis, rank: xv.rank() });
        }
        let dim = xv.shape()[axis];
        if len == 0 || start + len > dim {
            return Err(TensorError::Unsupported {
                what: "narrow range",
                value: format!("[{start}, {}) of axis size {dim}", start + len),
            });
        }
        let outer: usize = xv.shape()[..axis].iter().product();
        let inner: usize = xv.shape()[axis + 1..].iter().product();
        let d = xv.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            out.extend_from_slice(&d[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::from_parts(shape, out);
        Ok(self.push_op(value, Op::Narrow { x, axis, start }))
    }

    /// Centre crop of the spatial axes of an NCHW tensor.
    pub fn crop_center(&mut self, x: Var, h: usize, w: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        expect_rank("crop_center", xv.shape(), 4)?;
        let s = xv.shape();
        if h > s[2] || w > s[3] || h == 0 || w == 0 {
            return Err(mismatch("crop_center", s, &[h, w]));
        }
        let out = crop_planes(xv.data(), s[0] * s[1], s[2], s[3], h, w);
        let value = Tensor::from_parts(vec![s[0], s[1], h, w], out);
        Ok(self.push_op(value, Op::CropCenter(x)))
    }

    /// Zero padding of the spatial axes of an NCHW tensor, content centred
    /// exactly as [`Graph::crop_center`] would crop it back.
    pub fn pad_center(&mut self, x: Var, h: usize, w: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        expect_rank("pad_center", xv.shape(), 4)?;
        let s = xv.shape();
        if h < s[2] || w < s[3] {
            return Err(mismatch("pad_center", s, &[h, w]));
        }
        let out = pad_planes(xv.data(), s[0] * s[1], s[2], s[3], h, w);
        let value = Tensor::from_parts(vec![s[0], s[1], h, w], out);
        Ok(self.push_op(value, Op::PadCenter(x)))
    }
}

pub(crate) fn crop_planes<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let (dy, dx) = ((h - oh) / 2, (w - ow) / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for y in 0..oh {
            let row = p * h * w + (y + dy) * w + dx;
            out.extend_from_slice(&x[row..row + ow]);
        }
    }
    out
}

pub(crate) fn pad_planes<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let (dy, dx) = ((oh - h) / 2, (ow - w) / 2);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        for y in 0..h {
            let dst = p * oh * ow + (y + dy) * ow + dx;
            out[dst..dst + w].copy_from_slice(&x[p * h * w + y * w..p * h * w + (y + 1) * w]);
        }
    }
    out
}
