//! Naive scalar-loop versions of every operator. They favour obviousness over
//! speed and serve as oracles for the optimized kernels.

use super::attention::AttentionDims;
use super::conv::{check_conv_args, ConvSpec};
use super::linalg::Matrix;
use super::norm::BatchNormParams;
use super::{Real, Tensor};
use crate::error::{config_err, Result};

/// Direct seven-loop convolution.
pub fn conv2d<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let shape = check_conv_args(input, weights, spec)?;
    let [n, c_out, oh, ow] = shape;
    let (kh, kw) = spec.kernel;
    let cpg = spec.in_per_group();
    let out_per_group = c_out / spec.groups();
    let mut out = Tensor::zeros(shape);
    for ni in 0..n {
        for co in 0..c_out {
            let group = co / out_per_group;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for cl in 0..cpg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy as usize >= input.h() || ix as usize >= input.w() {
                                    continue;
                                }
                                acc = acc
                                    + input.at(ni, group * cpg + cl, iy as usize, ix as usize)
                                        * weights.at(co, cl, ky, kx);
                            }
                        }
                    }
                    let i = out.index(ni, co, oy, ox);
                    out.data_mut()[i] = acc;
                }
            }
        }
    }
    Ok(out)
}

pub fn batchnorm_infer<T: Real>(input: &Tensor<T>, p: &BatchNormParams<T>) -> Result<Tensor<T>> {
    if p.channels() != input.c() {
        return config_err("batchnorm channel mismatch");
    }
    Ok(Tensor::from_fn(input.shape(), |[n, c, h, w]| {
        let x = input.at(n, c, h, w);
        (x - p.mean[c]) / (p.var[c] + p.eps).sqrt() * p.gamma[c] + p.beta[c]
    }))
}

pub fn relu6<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        if v < T::zero() {
            T::zero()
        } else if v > T::of(6.0) {
            T::of(6.0)
        } else {
            v
        }
    })
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn softmax_rows<T: Real>(m: &[T], row_len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m.len());
    for row in m.chunks(row_len) {
        let mut max = row[0];
        for &v in row {
            if v > max {
                max = v;
            }
        }
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let mut sum = T::zero();
        for &e in &exps {
            sum = sum + e;
        }
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

/// Window mean with the same floor/ceil windows as the adaptive pool.
pub fn avg_pool<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (h, w) = (input.h(), input.w());
    Tensor::from_fn([input.n(), input.c(), out_h, out_w], |[n, c, oy, ox]| {
        let (y0, y1) = (oy * h / out_h, ((oy + 1) * h).div_ceil(out_h));
        let (x0, x1) = (ox * w / out_w, ((ox + 1) * w).div_ceil(out_w));
        let mut acc = T::zero();
        for y in y0..y1 {
            for x in x0..x1 {
                acc = acc + input.at(n, c, y, x);
            }
        }
        acc / T::of(((y1 - y0) * (x1 - x0)) as f64)
    })
}

/// Bilinear resize written straight from the half-pixel formula.
pub fn upsample_bilinear<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (h, w) = (input.h(), input.w());
    let coord = |d: usize, n_in: usize, n_out: usize| {
        let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = if i0 + 1 < n_in { i0 + 1 } else { i0 };
        (i0, i1, s - i0 as f64)
    };
    Tensor::from_fn([input.n(), input.c(), out_h, out_w], |[n, c, oy, ox]| {
        let (y0, y1, fy) = coord(oy, h, out_h);
        let (x0, x1, fx) = coord(ox, w, out_w);
        let (fy0, fy1, fx0, fx1) = (T::of(1.0 - fy), T::of(fy), T::of(1.0 - fx), T::of(fx));
        fy0 * (fx0 * input.at(n, c, y0, x0) + fx1 * input.at(n, c, y0, x1))
            + fy1 * (fx0 * input.at(n, c, y1, x0) + fx1 * input.at(n, c, y1, x1))
    })
}

pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return config_err("matmul shape mismatch");
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = T::zero();
            for k in 0..a.cols {
                acc = acc + a.at(i, k) * b.at(k, j);
            }
            out.data[i * b.cols + j] = acc;
        }
    }
    Ok(out)
}

pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let c: usize = parts.iter().map(|p| p.c()).sum();
    let [n, _, h, w] = parts[0].shape();
    Tensor::from_fn([n, c, h, w], |[ni, ci, hi, wi]| {
        let mut rest = ci;
        for p in parts {
            if rest < p.c() {
                return p.at(ni, rest, hi, wi);
            }
            rest -= p.c();
        }
        unreachable!("channel index within the concatenated width")
    })
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    Tensor::from_fn(a.shape(), |[n, c, h, w]| a.at(n, c, h, w) + b.at(n, c, h, w))
}

pub fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    Tensor::from_fn(a.shape(), |[n, c, h, w]| a.at(n, c, h, w) * b.at(n, c, h, w))
}

/// Token-by-token attention with explicit logits and normalisation.
pub fn attention<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, dims: AttentionDims) -> Result<Tensor<T>> {
    let tokens = dims.check(q, k, v)?;
    let w = q.w();
    let pos = |t: usize| (t / w, t % w);
    let scale = T::one() / T::of(dims.key_dim as f64).sqrt();
    let mut out = Tensor::zeros(v.shape());
    for n in 0..q.n() {
        for h in 0..dims.heads {
            for t in 0..tokens {
                let (ty, tx) = pos(t);
                let mut logits = vec![T::zero(); tokens];
                for (s, l) in logits.iter_mut().enumerate() {
                    let (sy, sx) = pos(s);
                    let mut dot = T::zero();
                    for d in 0..dims.key_dim {
                        let c = h * dims.key_dim + d;
                        dot = dot + q.at(n, c, ty, tx) * k.at(n, c, sy, sx);
                    }
                    *l = dot * scale;
                }
                let probs = softmax_rows(&logits, tokens);
                for e in 0..dims.value_dim {
                    let c = h * dims.value_dim + e;
                    let mut acc = T::zero();
                    for (s, &p) in probs.iter().enumerate() {
                        let (sy, sx) = pos(s);
                        acc = acc + p * v.at(n, c, sy, sx);
                    }
                    let i = out.index(n, c, ty, tx);
                    out.data_mut()[i] = acc;
                }
            }
        }
    }
    Ok(out)
}
