use rayon::prelude::*;

use super::{same_shape, Real, Tensor};
use crate::error::{config_err, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T = f32> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return config_err(format!("matrix {}x{} given {} values", rows, cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.at(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// `A · B`. Rows are computed in parallel; every output entry accumulates its
/// products in ascending inner index, the same order as the naive triple loop.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return config_err(format!("matmul: {}x{} · {}x{}", a.rows, a.cols, b.rows, b.cols));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    if b.cols == 0 {
        return Ok(out);
    }
    out.data.par_chunks_mut(b.cols).enumerate().for_each(|(i, row)| {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bk) in row.iter_mut().zip(brow) {
                *o = *o + aik * bk;
            }
        }
    });
    Ok(out)
}

/// Stacks tensors along C in argument order.
pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        return config_err("concat of zero tensors");
    };
    let [n, _, h, w] = first.shape();
    for p in parts {
        if p.n() != n || p.h() != h || p.w() != w {
            return config_err(format!("concat: {:?} incompatible with {:?}", p.shape(), first.shape()));
        }
    }
    let c: usize = parts.iter().map(|p| p.c()).sum();
    let hw = h * w;
    let mut data = Vec::with_capacity(n * c * hw);
    for ni in 0..n {
        for p in parts {
            data.extend_from_slice(&p.data()[ni * p.c() * hw..(ni + 1) * p.c() * hw]);
        }
    }
    Tensor::new([n, c, h, w], data)
}

/// Channels `[start, start + len)`.
pub fn slice_channels<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    if start + len > x.c() || len == 0 {
        return config_err(format!("slice of channels {}..{} out of {}", start, start + len, x.c()));
    }
    let hw = x.h() * x.w();
    let mut data = Vec::with_capacity(x.n() * len * hw);
    for ni in 0..x.n() {
        let base = (ni * x.c() + start) * hw;
        data.extend_from_slice(&x.data()[base..base + len * hw]);
    }
    Tensor::new([x.n(), len, x.h(), x.w()], data)
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("hadamard", a, b, |x, y| x * y)
}

fn zip_with<T: Real>(op: &str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    let out = Tensor::new(a.shape(), data)?;
    out.check_finite(op)?;
    Ok(out)
}

/// `x[n, c, h, w] · gate[n, c, 0, 0]`
pub fn channel_scale<T: Real>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    if gate.shape() != [x.n(), x.c(), 1, 1] {
        return config_err(format!("channel gate {:?} does not fit {:?}", gate.shape(), x.shape()));
    }
    let hw = x.h() * x.w();
    let mut out = x.clone();
    for (i, plane) in out.data_mut().chunks_mut(hw.max(1)).enumerate() {
        let g = gate.data()[i];
        for v in plane {
            *v = *v * g;
        }
    }
    Ok(out)
}

/// Gradients of [`channel_scale`] for `(x, gate)`.
pub fn channel_scale_backward<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    gate: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    same_shape("channel_scale_backward", grad_out, x)?;
    let hw = x.h() * x.w();
    let gx = channel_scale(grad_out, gate)?;
    let mut gg = Tensor::zeros(gate.shape());
    for (i, (g, xv)) in grad_out
        .data()
        .chunks(hw.max(1))
        .zip(x.data().chunks(hw.max(1)))
        .enumerate()
    {
        gg.data_mut()[i] = g.iter().zip(xv).fold(T::zero(), |s, (&a, &b)| s + a * b);
    }
    Ok((gx, gg))
}

/// Fully connected layer on `[N, in, 1, 1]` with `weight` of shape
/// `[out, in, 1, 1]`: `y[n, o] = Σ_i W[o, i] x[n, i] + b[o]`.
pub fn linear<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>) -> Result<Tensor<T>> {
    let [out_f, in_f, kh, kw] = weight.shape();
    if kh != 1 || kw != 1 || x.h() != 1 || x.w() != 1 || x.c() != in_f {
        return config_err(format!(
            "linear: input {:?} incompatible with weight {:?}",
            x.shape(),
            weight.shape()
        ));
    }
    if let Some(b) = bias {
        if b.len() != out_f {
            return config_err("linear: bias length mismatch");
        }
    }
    let mut out = Vec::with_capacity(x.n() * out_f);
    for ni in 0..x.n() {
        let xv = &x.data()[ni * in_f..(ni + 1) * in_f];
        for o in 0..out_f {
            let wrow = &weight.data()[o * in_f..(o + 1) * in_f];
            let mut acc = wrow.iter().zip(xv).fold(T::zero(), |s, (&a, &b)| s + a * b);
            if let Some(b) = bias {
                acc = acc + b[o];
            }
            out.push(acc);
        }
    }
    let t = Tensor::new([x.n(), out_f, 1, 1], out)?;
    t.check_finite("linear")?;
    Ok(t)
}

/// Returns `(grad_x, grad_weight, grad_bias)`.
pub fn linear_backward<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let [out_f, in_f, _, _] = weight.shape();
    if grad_out.shape() != [x.n(), out_f, 1, 1] {
        return config_err("linear backward: shape mismatch");
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = vec![T::zero(); out_f];
    for ni in 0..x.n() {
        for o in 0..out_f {
            let g = grad_out.data()[ni * out_f + o];
            gb[o] = gb[o] + g;
            for i in 0..in_f {
                let wi = o * in_f + i;
                let xi = ni * in_f + i;
                gw.data_mut()[wi] = gw.data()[wi] + g * x.data()[xi];
                gx.data_mut()[xi] = gx.data()[xi] + g * weight.data()[wi];
            }
        }
    }
    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_product() {
        let a = Matrix::new(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::new(2, 2, vec![5.0f32, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn concat_widths_add_up() {
        let parts: Vec<Tensor<f32>> = [16, 32, 64, 96].iter().map(|&c| Tensor::zeros([1, c, 8, 8])).collect();
        let refs: Vec<&Tensor<f32>> = parts.iter().collect();
        assert_eq!(concat_channels(&refs).unwrap().shape(), [1, 208, 8, 8]);
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = Tensor::<f32>::from_fn([2, 2, 2, 2], |[n, c, h, w]| (n * 8 + c * 4 + h * 2 + w) as f32);
        let b = Tensor::<f32>::from_fn([2, 3, 2, 2], |[n, c, h, w]| -((n * 12 + c * 4 + h * 2 + w) as f32));
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(slice_channels(&cat, 0, 2).unwrap(), a);
        assert_eq!(slice_channels(&cat, 2, 3).unwrap(), b);
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let a = Tensor::<f32>::from_fn([1, 2, 3, 3], |[_, c, h, w]| (c + h * w) as f32 - 2.5);
        let ones = Tensor::full(a.shape(), 1.0);
        assert_eq!(hadamard(&a, &ones).unwrap(), a);
    }

    #[test]
    fn elementwise_shape_mismatch_is_an_error() {
        let a = Tensor::<f32>::zeros([1, 2, 3, 3]);
        let b = Tensor::<f32>::zeros([1, 2, 3, 4]);
        assert!(add(&a, &b).is_err());
        assert!(hadamard(&a, &b).is_err());
        assert!(concat_channels(&[&a, &b]).is_err());
    }
}
