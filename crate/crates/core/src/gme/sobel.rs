use crate::error::{config_err, Result};
use crate::tensor::{Real, Tensor};

/// Histogram resolution used by [`otsu_level`].
pub const OTSU_BINS: usize = 256;

/// `√(Gx² + Gy²)` with the 3×3 Sobel stencils and replicate padding.
///
/// ```text
///      [-1 0 1]        [-1 -2 -1]
/// Gx = [-2 0 2]   Gy = [ 0  0  0]
///      [-1 0 1]        [ 1  2  1]
/// ```
pub fn sobel_magnitude<T: Real>(gray: &Tensor<T>) -> Result<Tensor<T>> {
    let (gx, gy) = sobel_gradients(gray)?;
    let data = gx
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&a, &b)| (a * a + b * b).sqrt())
        .collect();
    Tensor::new(gray.shape(), data)
}

/// The two directional responses behind [`sobel_magnitude`].
pub fn sobel_gradients<T: Real>(gray: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = gray.shape();
    if n != 1 || c != 1 {
        return config_err(format!("sobel expects a [1,1,H,W] image, got {:?}", gray.shape()));
    }
    if h < 3 || w < 3 {
        return config_err(format!("sobel needs at least 3x3 pixels, got {h}x{w}"));
    }
    let px = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        gray.at(0, 0, y, x)
    };
    let two = T::of(2.0);
    let mut gx = Tensor::zeros(gray.shape());
    let mut gy = Tensor::zeros(gray.shape());
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = (px(y - 1, x + 1) + two * px(y, x + 1) + px(y + 1, x + 1))
                - (px(y - 1, x - 1) + two * px(y, x - 1) + px(y + 1, x - 1));
            let dy = (px(y + 1, x - 1) + two * px(y + 1, x) + px(y + 1, x + 1))
                - (px(y - 1, x - 1) + two * px(y - 1, x) + px(y - 1, x + 1));
            let i = (y as usize) * w + x as usize;
            gx.data_mut()[i] = dx;
            gy.data_mut()[i] = dy;
        }
    }
    Ok((gx, gy))
}

fn bin_of(v: f64, max: f64) -> usize {
    ((v / max * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Otsu split of `values` over 256 bins spanning `[0, max]`.
///
/// Returns the last bin of the lower class (the first maximiser of the
/// between-class variance) and the equivalent magnitude cut, or `None` when
/// every value is zero.
pub fn otsu_level(values: &[f64]) -> Option<(usize, f64)> {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    let mut hist = [0u64; OTSU_BINS];
    for &v in values {
        hist[bin_of(v, max)] += 1;
    }
    let total = values.len() as f64;
    let weighted: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0);
    for (t, &count) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += count as f64;
        sum0 += t as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let diff = sum0 / w0 - (weighted - sum0) / w1;
        let between = w0 * w1 * diff * diff;
        if between > best {
            best = between;
            best_t = t;
        }
    }
    Some((best_t, (best_t + 1) as f64 * max / OTSU_BINS as f64))
}

/// Binary edge map of a non-negative magnitude map.
///
/// Without an override the cut comes from [`otsu_level`] and a pixel is an
/// edge when its histogram bin lies above the Otsu bin. With
/// `threshold = Some(t)` a pixel is an edge when its magnitude is `≥ t`.
pub fn edge_map<T: Real>(magnitude: &Tensor<T>, threshold: Option<f64>) -> Result<Tensor<T>> {
    let values: Vec<f64> = magnitude.data().iter().map(|v| v.to_f64_lossy()).collect();
    if let Some(i) = values.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
        return config_err(format!(
            "edge_map expects finite non-negative magnitude, index {i} is {}",
            values[i]
        ));
    }
    let edge = |on: bool| if on { T::one() } else { T::zero() };
    let data = match threshold {
        Some(t) => values.iter().map(|&v| edge(v >= t)).collect(),
        None => match otsu_level(&values) {
            None => vec![T::zero(); values.len()],
            Some((t, _)) => {
                let max = values.iter().copied().fold(0.0, f64::max);
                values.iter().map(|&v| edge(bin_of(v, max) > t)).collect()
            }
        },
    };
    Tensor::new(magnitude.shape(), data)
}
