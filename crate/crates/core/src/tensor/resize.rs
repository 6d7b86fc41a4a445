//! Bilinear upsampling with half-pixel centers (align-corners = false).
//!
//! For an axis of `n_in` inputs and `n_out ≥ n_in` outputs, output index `d`
//! samples source coordinate
//!
//! ```text
//! s  = max(0, (d + 0.5) · n_in / n_out − 0.5)      (computed in f64)
//! i0 = floor(s),  i1 = min(i0 + 1, n_in − 1)
//! λ1 = s − i0,    λ0 = 1 − λ1                        (cast to the tensor type)
//! ```
//!
//! and the output value is
//! `λ0ʸ·(λ0ˣ·x[y0,x0] + λ1ˣ·x[y0,x1]) + λ1ʸ·(λ0ˣ·x[y1,x0] + λ1ˣ·x[y1,x1])`,
//! evaluated in exactly that order.

use rayon::prelude::*;

use super::{Real, Tensor};
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub l0: f64,
    pub l1: f64,
}

pub(crate) fn tap(d: usize, n_in: usize, n_out: usize) -> Tap {
    let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    let l1 = s - i0 as f64;
    Tap {
        i0,
        i1,
        l0: 1.0 - l1,
        l1,
    }
}

pub fn upsample_bilinear<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w) = (input.h(), input.w());
    if out_h < h || out_w < w || h == 0 || w == 0 {
        return config_err(format!(
            "upsample_bilinear cannot map {}x{} to {}x{} (downscaling is not supported)",
            h, w, out_h, out_w
        ));
    }
    let ys: Vec<Tap> = (0..out_h).map(|d| tap(d, h, out_h)).collect();
    let xs: Vec<Tap> = (0..out_w).map(|d| tap(d, w, out_w)).collect();
    let shape = [input.n(), input.c(), out_h, out_w];
    let mut out = vec![T::zero(); shape.iter().product()];
    out.par_chunks_mut(out_h * out_w).enumerate().for_each(|(nc, plane)| {
        let src = &input.data()[nc * h * w..(nc + 1) * h * w];
        for (oy, ty) in ys.iter().enumerate() {
            let (ly0, ly1) = (T::of(ty.l0), T::of(ty.l1));
            for (ox, tx) in xs.iter().enumerate() {
                let (lx0, lx1) = (T::of(tx.l0), T::of(tx.l1));
                let top = lx0 * src[ty.i0 * w + tx.i0] + lx1 * src[ty.i0 * w + tx.i1];
                let bottom = lx0 * src[ty.i1 * w + tx.i0] + lx1 * src[ty.i1 * w + tx.i1];
                plane[oy * out_w + ox] = ly0 * top + ly1 * bottom;
            }
        }
    });
    Tensor::new(shape, out)
}

/// Adjoint of [`upsample_bilinear`].
pub fn upsample_bilinear_backward<T: Real>(grad_out: &Tensor<T>, input_shape: [usize; 4]) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    let (oh, ow) = (grad_out.h(), grad_out.w());
    if grad_out.n() != n || grad_out.c() != c || oh < h || ow < w {
        return config_err("upsample backward: shape mismatch");
    }
    let ys: Vec<Tap> = (0..oh).map(|d| tap(d, h, oh)).collect();
    let xs: Vec<Tap> = (0..ow).map(|d| tap(d, w, ow)).collect();
    let mut gx = Tensor::zeros(input_shape);
    for nc in 0..n * c {
        let base = nc * h * w;
        for (oy, ty) in ys.iter().enumerate() {
            for (ox, tx) in xs.iter().enumerate() {
                let g = grad_out.data()[nc * oh * ow + oy * ow + ox];
                let (ly0, ly1, lx0, lx1) = (T::of(ty.l0), T::of(ty.l1), T::of(tx.l0), T::of(tx.l1));
                let d = gx.data_mut();
                d[base + ty.i0 * w + tx.i0] = d[base + ty.i0 * w + tx.i0] + g * ly0 * lx0;
                d[base + ty.i0 * w + tx.i1] = d[base + ty.i0 * w + tx.i1] + g * ly0 * lx1;
                d[base + ty.i1 * w + tx.i0] = d[base + ty.i1 * w + tx.i0] + g * ly1 * lx0;
                d[base + ty.i1 * w + tx.i1] = d[base + ty.i1 * w + tx.i1] + g * ly1 * lx1;
            }
        }
    }
    Ok(gx)
}
