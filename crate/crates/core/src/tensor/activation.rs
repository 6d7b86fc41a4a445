use super::{Real, Tensor};
use crate::error::{config_err, Result};

#[inline]
pub fn relu6_scalar<T: Real>(x: T) -> T {
    x.max(T::zero()).min(T::of(6.0))
}

#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu6<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(relu6_scalar)
}

/// Passes the gradient where the pre-activation lies strictly inside (0, 6).
pub fn relu6_backward<T: Real>(grad_out: &Tensor<T>, pre: &Tensor<T>) -> Result<Tensor<T>> {
    super::same_shape("relu6_backward", grad_out, pre)?;
    let six = T::of(6.0);
    let data = grad_out
        .data()
        .iter()
        .zip(pre.data())
        .map(|(&g, &x)| if x > T::zero() && x < six { g } else { T::zero() })
        .collect();
    Tensor::new(grad_out.shape(), data)
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Uses the forward output `y`: `g · y · (1 − y)`.
pub fn sigmoid_backward<T: Real>(grad_out: &Tensor<T>, out: &Tensor<T>) -> Result<Tensor<T>> {
    super::same_shape("sigmoid_backward", grad_out, out)?;
    let data = grad_out
        .data()
        .iter()
        .zip(out.data())
        .map(|(&g, &y)| g * y * (T::one() - y))
        .collect();
    Tensor::new(grad_out.shape(), data)
}

/// Row-wise softmax of a row-major matrix with `row_len` columns. Each row is
/// shifted by its maximum before exponentiation.
pub fn softmax_rows<T: Real>(m: &[T], row_len: usize) -> Result<Vec<T>> {
    if row_len == 0 || !m.len().is_multiple_of(row_len) {
        return config_err(format!("softmax: {} values do not form rows of {}", m.len(), row_len));
    }
    let mut out = Vec::with_capacity(m.len());
    for row in m.chunks(row_len) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let start = out.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (v - max).exp();
            sum = sum + e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// `dx = y ⊙ (g − Σ_j g_j y_j)` per row.
pub fn softmax_rows_backward<T: Real>(grad_out: &[T], out: &[T], row_len: usize) -> Result<Vec<T>> {
    if grad_out.len() != out.len() || row_len == 0 || !out.len().is_multiple_of(row_len) {
        return config_err("softmax backward: shape mismatch");
    }
    let mut gx = Vec::with_capacity(out.len());
    for (g, y) in grad_out.chunks(row_len).zip(out.chunks(row_len)) {
        let dot = g.iter().zip(y).fold(T::zero(), |s, (&a, &b)| s + a * b);
        gx.extend(g.iter().zip(y).map(|(&gi, &yi)| yi * (gi - dot)));
    }
    Ok(gx)
}
