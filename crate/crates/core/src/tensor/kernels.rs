//! Slice-level numeric kernels shared by the forward and backward passes.
//!
//! All image tensors are NCHW. Convolution is cross-correlation (no kernel
//! flip) lowered to GEMM through an im2col buffer.

use super::Scalar;

/// Row-major `c = alpha * op(a) * op(b) + beta * c` where `op` optionally
/// transposes. `a` is stored as `m×k` (or `k×m` when `trans_a`), `b` as `k×n`
/// (or `n×k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: lhs too short");
    assert!(b.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe dense row-major storage.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel_w) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// A 1×1, stride-1, unpadded convolution reads the input as its own
    /// column buffer.
    pub fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one CHW image into a `(C·kh·kw) × (Ho·Wo)` column buffer.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let p = ho * wo;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a column buffer back, accumulating into `x`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let p = ho * wo;
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = iy as usize * g.width;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            plane[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution forward. `w` is `O × (C·kh·kw)`, output is `N×O×Ho×Wo`.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    out_channels: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let in_plane = g.channels * g.height * g.width;
    let (k, p) = (g.col_rows(), g.col_cols());
    let mut out = vec![T::zero(); batch * out_channels * p];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for n in 0..batch {
        let xin = &x[n * in_plane..(n + 1) * in_plane];
        let col_buf: &[T] = if g.is_pointwise() {
            xin
        } else {
            im2col(xin, g, &mut cols);
            &cols
        };
        let dst = &mut out[n * out_channels * p..(n + 1) * out_channels * p];
        if let Some(b) = bias {
            for (o, row) in dst.chunks_mut(p).enumerate() {
                row.fill(b[o]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        gemm(out_channels, k, p, T::one(), w, false, col_buf, false, beta, dst);
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
/// Each output is only computed when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    out_channels: usize,
    grad_out: &[T],
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let in_plane = g.channels * g.height * g.width;
    let (k, p) = (g.col_rows(), g.col_cols());
    let mut gx = want_x.then(|| vec![T::zero(); batch * in_plane]);
    let mut gw = want_w.then(|| vec![T::zero(); out_channels * k]);
    let mut gb = want_b.then(|| vec![T::zero(); out_channels]);
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * p }];
    let mut gcols = vec![T::zero(); if want_x && !g.is_pointwise() { k * p } else { 0 }];
    for n in 0..batch {
        let go = &grad_out[n * out_channels * p..(n + 1) * out_channels * p];
        if let Some(gb) = gb.as_mut() {
            for (o, row) in go.chunks(p).enumerate() {
                gb[o] += row.iter().copied().sum::<T>();
            }
        }
        if let Some(gw) = gw.as_mut() {
            let xin = &x[n * in_plane..(n + 1) * in_plane];
            let col_buf: &[T] = if g.is_pointwise() {
                xin
            } else {
                im2col(xin, g, &mut cols);
                &cols
            };
            gemm(out_channels, p, k, T::one(), go, false, col_buf, true, T::one(), gw);
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[n * in_plane..(n + 1) * in_plane];
            if g.is_pointwise() {
                gemm(k, out_channels, p, T::one(), w, true, go, false, T::one(), dst);
            } else {
                gemm(k, out_channels, p, T::one(), w, true, go, false, T::zero(), &mut gcols);
                col2im(&gcols, g, dst);
            }
        }
    }
    (gx, gw, gb)
}

/// Nearest-neighbour ×2 upsampling of `planes` H×W planes.
pub fn upsample_nearest2<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = src[(oy / 2) * w + ox / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2_backward<T: Scalar>(
    g: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &g[pl * oh * ow..(pl + 1) * oh * ow];
        let dst = &mut out[pl * h * w..(pl + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[(oy / 2) * w + ox / 2] += src[oy * ow + ox];
            }
        }
    }
    out
}

/// 1-D half-pixel-centre taps for ×2 upsampling: output `o` reads
/// `0.75·x[o/2] + 0.25·x[neighbour]` with the neighbour clamped at the border.
fn bilinear_taps(o: usize, len: usize) -> (usize, usize) {
    let i = o / 2;
    let j = if o % 2 == 0 {
        i.saturating_sub(1)
    } else {
        (i + 1).min(len - 1)
    };
    (i, j)
}

/// Bilinear ×2 upsampling with half-pixel-centre alignment. Every input pixel
/// receives total weight 4, so the mean is preserved.
pub fn upsample_bilinear2<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let near = T::of(0.75);
    let far = T::of(0.25);
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut rows = vec![T::zero(); oh * w];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        for oy in 0..oh {
            let (i, j) = bilinear_taps(oy, h);
            for xw in 0..w {
                rows[oy * w + xw] = near * src[i * w + xw] + far * src[j * w + xw];
            }
        }
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let (i, j) = bilinear_taps(ox, w);
                dst[oy * ow + ox] = near * rows[oy * w + i] + far * rows[oy * w + j];
            }
        }
    }
    out
}

pub fn upsample_bilinear2_backward<T: Scalar>(
    g: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let near = T::of(0.75);
    let far = T::of(0.25);
    let mut out = vec![T::zero(); planes * h * w];
    let mut rows = vec![T::zero(); oh * w];
    for pl in 0..planes {
        rows.fill(T::zero());
        let src = &g[pl * oh * ow..(pl + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let (i, j) = bilinear_taps(ox, w);
                let v = src[oy * ow + ox];
                rows[oy * w + i] += near * v;
                rows[oy * w + j] += far * v;
            }
        }
        let dst = &mut out[pl * h * w..(pl + 1) * h * w];
        for oy in 0..oh {
            let (i, j) = bilinear_taps(oy, h);
            for xw in 0..w {
                let v = rows[oy * w + xw];
                dst[i * w + xw] += near * v;
                dst[j * w + xw] += far * v;
            }
        }
    }
    out
}

/// Non-overlapping 2×2 average pooling. `h` and `w` must be even.
pub fn avg_pool2<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, x0) = (2 * oy, 2 * ox);
                dst[oy * ow + ox] = quarter
                    * (src[y * w + x0] + src[y * w + x0 + 1] + src[(y + 1) * w + x0] + src[(y + 1) * w + x0 + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(g: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &g[pl * oh * ow..(pl + 1) * oh * ow];
        let dst = &mut out[pl * h * w..(pl + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = quarter * src[(y / 2) * ow + x / 2];
            }
        }
    }
    out
}

/// Population mean and variance of a slice, accumulated in `f64`.
pub fn moments<T: Scalar>(x: &[T]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = x
        .iter()
        .map(|v| {
            let d = v.as_f64() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var)
}
