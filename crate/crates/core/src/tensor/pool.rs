use rayon::prelude::*;

use super::{Real, Tensor};
use crate::error::{config_err, Result};

/// Window `[start, end)` of output cell `i` when `size` inputs map onto `out`
/// cells: `start = floor(i·size/out)`, `end = ceil((i+1)·size/out)`.
#[inline]
pub(crate) fn window(i: usize, size: usize, out: usize) -> (usize, usize) {
    (i * size / out, ((i + 1) * size).div_ceil(out))
}

/// Mean over disjoint windows. `out_h` and `out_w` must divide H and W.
pub fn avg_pool<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 || !input.h().is_multiple_of(out_h) || !input.w().is_multiple_of(out_w) {
        return config_err(format!(
            "avg_pool target {}x{} does not divide input {}x{}",
            out_h,
            out_w,
            input.h(),
            input.w()
        ));
    }
    adaptive_avg_pool(input, out_h, out_w)
}

/// Mean over possibly overlapping windows (floor start, ceil end). Equal to
/// [`avg_pool`] whenever the target divides the input.
pub fn adaptive_avg_pool<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 || out_h > input.h() || out_w > input.w() {
        return config_err(format!(
            "adaptive pool target {}x{} invalid for input {}x{}",
            out_h,
            out_w,
            input.h(),
            input.w()
        ));
    }
    let (h, w) = (input.h(), input.w());
    let shape = [input.n(), input.c(), out_h, out_w];
    let mut out = vec![T::zero(); shape.iter().product()];
    out.par_chunks_mut(out_h * out_w).enumerate().for_each(|(nc, plane)| {
        let src = &input.data()[nc * h * w..(nc + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1) = window(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = window(ox, w, out_w);
                let mut acc = T::zero();
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc = acc + src[y * w + x];
                    }
                }
                plane[oy * out_w + ox] = acc / T::of(((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    });
    Tensor::new(shape, out)
}

pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    adaptive_avg_pool(input, 1, 1)
}

/// Adjoint of [`adaptive_avg_pool`]: spreads each output gradient evenly
/// over its window.
pub fn adaptive_avg_pool_backward<T: Real>(grad_out: &Tensor<T>, input_shape: [usize; 4]) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    let (oh, ow) = (grad_out.h(), grad_out.w());
    if grad_out.n() != n || grad_out.c() != c || oh == 0 || ow == 0 || oh > h || ow > w {
        return config_err("pool backward: shape mismatch");
    }
    let mut gx = Tensor::zeros(input_shape);
    for nc in 0..n * c {
        for oy in 0..oh {
            let (y0, y1) = window(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1) = window(ox, w, ow);
                let g = grad_out.data()[nc * oh * ow + oy * ow + ox] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let i = nc * h * w + y * w + x;
                        gx.data_mut()[i] = gx.data()[i] + g;
                    }
                }
            }
        }
    }
    Ok(gx)
}
