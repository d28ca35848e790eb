//! Local gradient rules, one arm per recorded op.

use super::ops::{crop_planes, pad_planes, reduce_index_map, sigmoid, BinaryKind, ReduceKind, UpsampleMode};
use super::{Broadcast, Graph, Op, Var};
use crate::tensor::kernels;
use crate::tensor::{Scalar, Tensor};

fn like<T: Scalar>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::from_parts(shape.to_vec(), data)
}

/// Sums a full-shape gradient down to the broadcast operand's shape.
fn unbroadcast<T: Scalar>(g: Vec<T>, bcast: Broadcast, b_shape: &[usize]) -> Tensor<T> {
    match bcast {
        Broadcast::Same => like(b_shape, g),
        Broadcast::Scalar | Broadcast::Trailing => {
            let blen: usize = b_shape.iter().product();
            let mut acc = vec![T::zero(); blen];
            for (i, v) in g.into_iter().enumerate() {
                acc[i % blen] += v;
            }
            like(b_shape, acc)
        }
    }
}

pub(super) fn backward_op<T: Scalar>(graph: &Graph<T>, i: usize, g_out: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let out = graph.node_value(i);
    let val = |v: Var| graph.node_value(v.0);
    let wants = |v: Var| graph.requires_grad(v);
    let g = g_out.data();
    let mut res = Vec::new();

    match graph.node_op(i) {
        Op::Leaf => {}
        Op::Binary { kind, a, b, bcast } => {
            let (av, bv) = (val(*a), val(*b));
            let (ad, bd) = (av.data(), bv.data());
            let blen = bd.len();
            if wants(*a) {
                let ga: Vec<T> = match kind {
                    BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                    BinaryKind::Mul => g.iter().enumerate().map(|(k, &gv)| gv * bd[k % blen]).collect(),
                    BinaryKind::Div => g.iter().enumerate().map(|(k, &gv)| gv / bd[k % blen]).collect(),
                };
                res.push((*a, like(av.shape(), ga)));
            }
            if wants(*b) {
                let gb: Vec<T> = match kind {
                    BinaryKind::Add => g.to_vec(),
                    BinaryKind::Sub => g.iter().map(|&gv| -gv).collect(),
                    BinaryKind::Mul => g.iter().zip(ad).map(|(&gv, &x)| gv * x).collect(),
                    BinaryKind::Div => g
                        .iter()
                        .enumerate()
                        .map(|(k, &gv)| {
                            let y = bd[k % blen];
                            -gv * ad[k] / (y * y)
                        })
                        .collect(),
                };
                res.push((*b, unbroadcast(gb, *bcast, bv.shape())));
            }
        }
        Op::AddScalar(x) => res.push((*x, g_out.clone())),
        Op::MulScalar(x, s) => res.push((*x, g_out.map(|v| v * *s))),
        Op::Matmul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if wants(*a) {
                let mut ga = vec![T::zero(); m * k];
                kernels::gemm(m, n, k, T::one(), g, false, bv.data(), true, T::zero(), &mut ga);
                res.push((*a, like(av.shape(), ga)));
            }
            if wants(*b) {
                let mut gb = vec![T::zero(); k * n];
                kernels::gemm(k, m, n, T::one(), av.data(), true, g, false, T::zero(), &mut gb);
                res.push((*b, like(bv.shape(), gb)));
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            let mut gx = vec![T::zero(); r * c];
            for a in 0..r {
                for b in 0..c {
                    gx[b * r + a] = g[a * c + b];
                }
            }
            res.push((*x, like(val(*x).shape(), gx)));
        }
        Op::Conv2d { x, w, bias, geom } => {
            let (xv, wv) = (val(*x), val(*w));
            let (gx, gw, gb) = kernels::conv2d_backward(
                xv.data(),
                xv.shape()[0],
                geom,
                wv.data(),
                wv.shape()[0],
                g,
                wants(*x),
                wants(*w),
                bias.is_some_and(|b| wants(b)),
            );
            if let Some(gx) = gx {
                res.push((*x, like(xv.shape(), gx)));
            }
            if let Some(gw) = gw {
                res.push((*w, like(wv.shape(), gw)));
            }
            if let (Some(b), Some(gb)) = (bias, gb) {
                res.push((*b, like(val(*b).shape(), gb)));
            }
        }
        Op::LeakyRelu(x, slope) => {
            let gx = g
                .iter()
                .zip(val(*x).data())
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { gv * *slope })
                .collect();
            res.push((*x, like(out.shape(), gx)));
        }
        Op::Upsample(x, mode) => {
            let s = val(*x).shape();
            let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
            let gx = match mode {
                UpsampleMode::Nearest => kernels::upsample_nearest2_backward(g, planes, h, w),
                UpsampleMode::Bilinear => kernels::upsample_bilinear2_backward(g, planes, h, w),
            };
            res.push((*x, like(s, gx)));
        }
        Op::AvgPool2(x) => {
            let s = val(*x).shape();
            res.push((*x, like(s, kernels::avg_pool2_backward(g, s[0] * s[1], s[2], s[3]))));
        }
        Op::Reduce { kind, x, axes } => {
            let xv = val(*x);
            let (_, map) = reduce_index_map(xv.shape(), axes);
            let count = T::of((xv.len() / out.len()) as f64);
            let gx: Vec<T> = match kind {
                ReduceKind::Sum => map.iter().map(|&o| g[o]).collect(),
                ReduceKind::Mean => map.iter().map(|&o| g[o] / count).collect(),
                ReduceKind::Std => {
                    let mut means = vec![0.0f64; out.len()];
                    for (&o, v) in map.iter().zip(xv.data()) {
                        means[o] += v.as_f64();
                    }
                    let c = count.as_f64();
                    means.iter_mut().for_each(|m| *m /= c);
                    let sd = out.data();
                    map.iter()
                        .zip(xv.data())
                        .map(|(&o, v)| {
                            // Zero subgradient where the spread is exactly zero.
                            if sd[o] > T::zero() {
                                T::of(g[o].as_f64() * (v.as_f64() - means[o]) / (c * sd[o].as_f64()))
                            } else {
                                T::zero()
                            }
                        })
                        .collect()
                }
            };
            res.push((*x, like(xv.shape(), gx)));
        }
        Op::InstanceNorm { x, inv_std } => {
            let s = out.shape();
            let plane = s[2] * s[3];
            let y = out.data();
            let mut gx = vec![T::zero(); y.len()];
            for (k, inv) in inv_std.iter().enumerate() {
                let range = k * plane..(k + 1) * plane;
                let (gs, ys) = (&g[range.clone()], &y[range.clone()]);
                let n = plane as f64;
                let mean_g = gs.iter().map(|v| v.as_f64()).sum::<f64>() / n;
                let mean_gy = gs.iter().zip(ys).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>() / n;
                let inv = inv.as_f64();
                for ((d, &gv), &yv) in gx[range].iter_mut().zip(gs).zip(ys) {
                    *d = T::of(inv * (gv.as_f64() - mean_g - yv.as_f64() * mean_gy));
                }
            }
            res.push((*x, like(s, gx)));
        }
        Op::ChannelAffine { x, scale, shift } => {
            let xv = val(*x);
            let s = xv.shape();
            let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
            let xd = xv.data();
            let per_sample = |v: &Var| val(*v).shape().len() == 2;
            if wants(*x) {
                let mut gx = g.to_vec();
                if let Some(sc) = scale {
                    let sd = val(*sc).data();
                    let per = per_sample(sc);
                    for (k, chunk) in gx.chunks_mut(plane).enumerate() {
                        let a = sd[if per { k } else { k % c }];
                        chunk.iter_mut().for_each(|v| *v *= a);
                    }
                }
                res.push((*x, like(s, gx)));
            }
            for (param, is_scale) in [(scale, true), (shift, false)] {
                let Some(p) = param else { continue };
                if !wants(*p) {
                    continue;
                }
                let per = per_sample(p);
                let mut gp = vec![T::zero(); if per { n * c } else { c }];
                for k in 0..n * c {
                    let range = k * plane..(k + 1) * plane;
                    let sum: T = if is_scale {
                        g[range.clone()].iter().zip(&xd[range]).map(|(&a, &b)| a * b).sum()
                    } else {
                        g[range].iter().copied().sum()
                    };
                    gp[if per { k } else { k % c }] += sum;
                }
                res.push((*p, like(val(*p).shape(), gp)));
            }
        }
        Op::InjectNoise { x, strength, noise } => {
            if wants(*x) {
                res.push((*x, g_out.clone()));
            }
            if wants(*strength) {
                let s = out.shape();
                let (c, plane) = (s[1], s[2] * s[3]);
                let nd = noise.data();
                let mut gs = vec![T::zero(); c];
                for (k, chunk) in g.chunks(plane).enumerate() {
                    let (ni, ci) = (k / c, k % c);
                    gs[ci] += chunk.iter().zip(&nd[ni * plane..(ni + 1) * plane]).map(|(&a, &b)| a * b).sum::<T>();
                }
                res.push((*strength, like(&[c], gs)));
            }
        }
        Op::PixelNorm { x, inv_rms } => {
            let d = out.shape()[1];
            let y = out.data();
            let mut gx = vec![T::zero(); y.len()];
            for (r, inv) in inv_rms.iter().enumerate() {
                let range = r * d..(r + 1) * d;
                let mean_gy =
                    g[range.clone()].iter().zip(&y[range.clone()]).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>()
                        / d as f64;
                let inv = inv.as_f64();
                for ((o, &gv), &yv) in gx[range.clone()].iter_mut().zip(&g[range.clone()]).zip(&y[range]) {
                    *o = T::of(inv * (gv.as_f64() - yv.as_f64() * mean_gy));
                }
            }
            res.push((*x, like(out.shape(), gx)));
        }
        Op::MinibatchStddev { x, group } => {
            let xv = val(*x);
            let s = xv.shape();
            let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
            let (sample, plane) = (c * h * w, h * w);
            let xd = xv.data();
            let mut gx = vec![T::zero(); xd.len()];
            for m in 0..n {
                let src = &g[m * (c + 1) * plane..m * (c + 1) * plane + sample];
                gx[m * sample..(m + 1) * sample].copy_from_slice(src);
            }
            let group = *group;
            for gi in 0..n / group {
                let members = gi * group..(gi + 1) * group;
                let g_stat: f64 = members
                    .clone()
                    .map(|m| {
                        let base = m * (c + 1) * plane + sample;
                        g[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>()
                    })
                    .sum();
                let per_loc = g_stat / sample as f64;
                for loc in 0..sample {
                    let vals: Vec<f64> = members.clone().map(|m| xd[m * sample + loc].as_f64()).collect();
                    let mean = vals.iter().sum::<f64>() / group as f64;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / group as f64;
                    let sd = var.sqrt();
                    if sd == 0.0 {
                        continue;
                    }
                    for (j, m) in members.clone().enumerate() {
                        gx[m * sample + loc] += T::of(per_loc * (vals[j] - mean) / (group as f64 * sd));
                    }
                }
            }
            res.push((*x, like(s, gx)));
        }
        Op::Sigmoid(x) => {
            let gx = g.iter().zip(out.data()).map(|(&gv, &y)| gv * y * (T::one() - y)).collect();
            res.push((*x, like(out.shape(), gx)));
        }
        Op::LogSigmoid(x) => {
            let gx = g.iter().zip(val(*x).data()).map(|(&gv, &xv)| gv * sigmoid(-xv)).collect();
            res.push((*x, like(out.shape(), gx)));
        }
        Op::Reshape(x) => res.push((*x, g_out.reshape(val(*x).shape().to_vec()).expect("same count"))),
        Op::RepeatBatch(x) => {
            let xv = val(*x);
            let len = xv.len();
            let mut gx = vec![T::zero(); len];
            for chunk in g.chunks(len) {
                for (a, &b) in gx.iter_mut().zip(chunk) {
                    *a += b;
                }
            }
            res.push((*x, like(xv.shape(), gx)));
        }
        Op::Narrow { x, axis, start } => {
            let xv = val(*x);
            let dim = xv.shape()[*axis];
            let len = out.shape()[*axis];
            let outer: usize = xv.shape()[..*axis].iter().product();
            let inner: usize = xv.shape()[*axis + 1..].iter().product();
            let mut gx = vec![T::zero(); xv.len()];
            for o in 0..outer {
                let dst = o * dim * inner + start * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            res.push((*x, like(xv.shape(), gx)));
        }
        Op::CropCenter(x) => {
            let s = val(*x).shape();
            let os = out.shape();
            res.push((*x, like(s, pad_planes(g, s[0] * s[1], os[2], os[3], s[2], s[3]))));
        }
        Op::PadCenter(x) => {
            let s = val(*x).shape();
            let os = out.shape();
            res.push((*x, like(s, crop_planes(g, s[0] * s[1], os[2], os[3], s[2], s[3]))));
        }
    }
    res
}
