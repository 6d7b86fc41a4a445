use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    /// 1×1 channel mixing.
    Pointwise,
    /// One k×k filter per channel (channel multiplier 1).
    Depthwise,
    /// Full k×k convolution over all input channels.
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kind: ConvKind,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: ConvKind::Pointwise,
            kernel: (1, 1),
            stride: 1,
            padding: 0,
            in_channels,
            out_channels,
        }
    }

    /// Depthwise k×k with "same" padding (`k / 2`).
    pub fn depthwise(channels: usize, k: usize, stride: usize) -> Self {
        Self {
            kind: ConvKind::Depthwise,
            kernel: (k, k),
            stride,
            padding: k / 2,
            in_channels: channels,
            out_channels: channels,
        }
    }

    /// Dense k×k with "same" padding (`k / 2`).
    pub fn dense(in_channels: usize, out_channels: usize, k: usize, stride: usize) -> Self {
        Self {
            kind: ConvKind::Dense,
            kernel: (k, k),
            stride,
            padding: k / 2,
            in_channels,
            out_channels,
        }
    }

    pub fn groups(&self) -> usize {
        match self.kind {
            ConvKind::Depthwise => self.in_channels,
            _ => 1,
        }
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups()
    }

    /// `[out, in / groups, kh, kw]`
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_per_group(), self.kernel.0, self.kernel.1]
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if kh == 0 || kw == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return config_err(format!("invalid conv spec {self:?}"));
        }
        match self.kind {
            ConvKind::Depthwise if self.out_channels != self.in_channels => config_err(format!(
                "depthwise conv requires out_channels == in_channels, got {} -> {}",
                self.in_channels, self.out_channels
            )),
            ConvKind::Pointwise if self.kernel != (1, 1) => {
                config_err(format!("pointwise conv requires a 1x1 kernel, got {:?}", self.kernel))
            }
            _ => Ok(()),
        }
    }

    /// `floor((size + 2·pad − k) / stride) + 1` along each spatial axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return config_err(format!(
                "conv kernel {:?} larger than padded input {}x{}",
                self.kernel, ph, pw
            ));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let (oh, ow) = self.output_hw(input[2], input[3])?;
        Ok([input[0], self.out_channels, oh, ow])
    }

    /// Multiply-accumulates for one sample at the given input resolution.
    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let (oh, ow) = self.output_hw(h, w)?;
        Ok((self.kernel.0 * self.kernel.1 * self.in_per_group() * self.out_channels * oh * ow) as u64)
    }
}

pub(crate) fn check_conv_args<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec) -> Result<[usize; 4]> {
    spec.validate()?;
    if input.c() != spec.in_channels {
        return config_err(format!(
            "conv expects {} input channels, got {}",
            spec.in_channels,
            input.c()
        ));
    }
    if weights.shape() != spec.weight_shape() {
        return config_err(format!(
            "conv weight shape {:?} does not match {:?} for {:?}",
            weights.shape(),
            spec.weight_shape(),
            spec.kind
        ));
    }
    spec.output_shape(input.shape())
}

/// Convolution without bias.
pub fn conv2d<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    conv2d_impl(input, weights, spec, false)
}

/// Same as [`conv2d`] but reads every kernel with its spatial taps mirrored.
/// Exists only so the oracle sweep can prove it detects indexing bugs.
#[doc(hidden)]
pub fn conv2d_mutated<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    conv2d_impl(input, weights, spec, true)
}

fn conv2d_impl<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec, mirror: bool) -> Result<Tensor<T>> {
    let out_shape = check_conv_args(input, weights, spec)?;
    let w = if mirror { mirror_taps(weights) } else { weights.clone() };
    let out = match spec.kind {
        ConvKind::Depthwise => depthwise(input, &w, spec, out_shape),
        _ => im2col_gemm(input, &w, spec, out_shape),
    };
    out.check_finite("conv2d")?;
    Ok(out)
}

fn mirror_taps<T: Real>(w: &Tensor<T>) -> Tensor<T> {
    let [_, _, kh, kw] = w.shape();
    Tensor::from_fn(w.shape(), |[o, i, y, x]| w.at(o, i, kh - 1 - y, kw - 1 - x))
}

/// Dense and pointwise path: unfold the input into a `[K, P]` column matrix
/// (`K = C_in·kh·kw`, `P = H_out·W_out`) and accumulate rows in ascending `K`.
fn im2col_gemm<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec, out_shape: [usize; 4]) -> Tensor<T> {
    let [n, c_out, oh, ow] = out_shape;
    let (kh, kw) = spec.kernel;
    let (h, w) = (input.h(), input.w());
    let k_len = spec.in_channels * kh * kw;
    let p_len = oh * ow;
    let direct = kh == 1 && kw == 1 && spec.stride == 1 && spec.padding == 0;
    let mut out = vec![T::zero(); n * c_out * p_len];
    let mut cols = if direct {
        Vec::new()
    } else {
        vec![T::zero(); k_len * p_len]
    };

    for ni in 0..n {
        let sample = &input.data()[ni * spec.in_channels * h * w..(ni + 1) * spec.in_channels * h * w];
        let cols_ref: &[T] = if direct {
            sample
        } else {
            fill_cols(sample, spec, h, w, oh, ow, &mut cols);
            &cols
        };
        let out_n = &mut out[ni * c_out * p_len..(ni + 1) * c_out * p_len];
        out_n.par_chunks_mut(p_len).enumerate().for_each(|(co, plane)| {
            let wrow = &weights.data()[co * k_len..(co + 1) * k_len];
            for (k, &wk) in wrow.iter().enumerate() {
                let col = &cols_ref[k * p_len..(k + 1) * p_len];
                for (o, &x) in plane.iter_mut().zip(col) {
                    *o = *o + wk * x;
                }
            }
        });
    }
    Tensor::new(out_shape, out).expect("shape computed above")
}

fn fill_cols<T: Real>(sample: &[T], spec: &ConvSpec, h: usize, w: usize, oh: usize, ow: usize, cols: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let p_len = oh * ow;
    let pad = spec.padding as isize;
    cols.par_chunks_mut(p_len).enumerate().for_each(|(k, row)| {
        let ci = k / (kh * kw);
        let ky = (k / kw) % kh;
        let kx = k % kw;
        let plane = &sample[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            let iy = (oy * spec.stride + ky) as isize - pad;
            for ox in 0..ow {
                let ix = (ox * spec.stride + kx) as isize - pad;
                row[oy * ow + ox] = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                    plane[iy as usize * w + ix as usize]
                } else {
                    T::zero()
                };
            }
        }
    });
}

fn depthwise<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec, out_shape: [usize; 4]) -> Tensor<T> {
    let [_, c, oh, ow] = out_shape;
    let (kh, kw) = spec.kernel;
    let (h, w) = (input.h(), input.w());
    let pad = spec.padding as isize;
    let mut out = vec![T::zero(); out_shape.iter().product()];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(nc, plane)| {
        let ci = nc % c;
        let src = &input.data()[nc * h * w..(nc + 1) * h * w];
        let k = &weights.data()[ci * kh * kw..(ci + 1) * kh * kw];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for ky in 0..kh {
                    let iy = (oy * spec.stride + ky) as isize - pad;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for kx in 0..kw {
                        let ix = (ox * spec.stride + kx) as isize - pad;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        acc = acc + row[ix as usize] * k[ky * kw + kx];
                    }
                }
                plane[oy * ow + ox] = acc;
            }
        }
    });
    Tensor::new(out_shape, out).expect("shape computed above")
}

/// Exact gradients of [`conv2d`] with respect to its input and weights.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let out_shape = check_conv_args(input, weights, spec)?;
    if grad_out.shape() != out_shape {
        return config_err(format!(
            "conv backward: grad_out shape {:?} != forward output {:?}",
            grad_out.shape(),
            out_shape
        ));
    }
    let [n, c_out, oh, ow] = out_shape;
    let (kh, kw) = spec.kernel;
    let (h, w) = (input.h(), input.w());
    let cpg = spec.in_per_group();
    let out_per_group = c_out / spec.groups();
    let pad = spec.padding as isize;

    let mut gx = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weights.shape());
    for ni in 0..n {
        for co in 0..c_out {
            let group = co / out_per_group;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad_out.at(ni, co, oy, ox);
                    for cl in 0..cpg {
                        let ci = group * cpg + cl;
                        for ky in 0..kh {
                            let iy = (oy * spec.stride + ky) as isize - pad;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * spec.stride + kx) as isize - pad;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                let xi = input.index(ni, ci, iy as usize, ix as usize);
                                let wi = weights.index(co, cl, ky, kx);
                                gw.data_mut()[wi] = gw.data()[wi] + g * input.data()[xi];
                                gx.data_mut()[xi] = gx.data()[xi] + g * weights.data()[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw))
}

/// Adds `bias[c]` to every element of channel `c`.
pub fn add_channel_bias<T: Real>(t: &mut Tensor<T>, bias: &[T]) -> Result<()> {
    if bias.len() != t.c() {
        return config_err(format!("bias length {} != channels {}", bias.len(), t.c()));
    }
    let hw = t.h() * t.w();
    let c = t.c();
    for (i, chunk) in t.data_mut().chunks_mut(hw).enumerate() {
        let b = bias[i % c];
        for v in chunk {
            *v = *v + b;
        }
    }
    Ok(())
}

/// Gradient of a per-channel bias: sum of `grad_out` over N, H and W.
pub fn channel_sum<T: Real>(grad_out: &Tensor<T>) -> Vec<T> {
    let hw = grad_out.h() * grad_out.w();
    let c = grad_out.c();
    let mut acc = vec![T::zero(); c];
    for (i, chunk) in grad_out.data().chunks(hw).enumerate() {
        acc[i % c] = chunk.iter().fold(acc[i % c], |s, &v| s + v);
    }
    acc
}
