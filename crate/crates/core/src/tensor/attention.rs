//! Multi-head scaled dot-product attention over spatial tokens.
//!
//! Channel layout: `q` and `k` carry `heads · key_dim` channels and `v`
//! carries `heads · value_dim`, head-major. Every spatial position is one
//! token, so for head `h` the token matrix `Q_h[t, d] = q[n, h·key_dim + d, t]`.
//! The output keeps the head-major layout of `v`.

use super::activation::{softmax_rows, softmax_rows_backward};
use super::linalg::{matmul, Matrix};
use super::{Real, Tensor};
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionDims {
    pub heads: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

impl AttentionDims {
    pub(crate) fn check<T: Real>(&self, q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<usize> {
        let tokens = q.h() * q.w();
        if tokens == 0 {
            return config_err("attention over zero tokens");
        }
        let qk = [q.n(), self.heads * self.key_dim, q.h(), q.w()];
        let vv = [q.n(), self.heads * self.value_dim, q.h(), q.w()];
        if q.shape() != qk || k.shape() != qk || v.shape() != vv {
            return config_err(format!(
                "attention shapes q{:?} k{:?} v{:?} do not match {:?}",
                q.shape(),
                k.shape(),
                v.shape(),
                self
            ));
        }
        Ok(tokens)
    }
}

/// `[tokens, dim]` matrix of head `h` from a head-major channel tensor.
pub(crate) fn head_tokens<T: Real>(x: &Tensor<T>, n: usize, h: usize, dim: usize) -> Matrix<T> {
    let tokens = x.h() * x.w();
    let mut m = Matrix::zeros(tokens, dim);
    for d in 0..dim {
        let plane = x.plane(n, h * dim + d);
        for (t, &v) in plane.iter().enumerate() {
            m.data[t * dim + d] = v;
        }
    }
    m
}

fn scatter_head<T: Real>(dst: &mut Tensor<T>, m: &Matrix<T>, n: usize, h: usize, dim: usize) {
    let tokens = m.rows;
    for d in 0..dim {
        let base = dst.index(n, h * dim + d, 0, 0);
        for t in 0..tokens {
            dst.data_mut()[base + t] = m.data[t * dim + d];
        }
    }
}

/// Attention probabilities `softmax(Q Kᵀ / sqrt(key_dim))` for one head.
pub(crate) fn head_probs<T: Real>(qm: &Matrix<T>, km: &Matrix<T>, key_dim: usize) -> Result<Matrix<T>> {
    let mut logits = matmul(qm, &km.transpose())?;
    let scale = T::one() / T::of(key_dim as f64).sqrt();
    for v in &mut logits.data {
        *v = *v * scale;
    }
    let p = softmax_rows(&logits.data, logits.cols)?;
    Matrix::new(logits.rows, logits.cols, p)
}

pub fn attention<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, dims: AttentionDims) -> Result<Tensor<T>> {
    dims.check(q, k, v)?;
    let mut out = Tensor::zeros(v.shape());
    for n in 0..q.n() {
        for h in 0..dims.heads {
            let qm = head_tokens(q, n, h, dims.key_dim);
            let km = head_tokens(k, n, h, dims.key_dim);
            let vm = head_tokens(v, n, h, dims.value_dim);
            let p = head_probs(&qm, &km, dims.key_dim)?;
            let o = matmul(&p, &vm)?;
            scatter_head(&mut out, &o, n, h, dims.value_dim);
        }
    }
    out.check_finite("attention")?;
    Ok(out)
}

pub struct AttentionGrads<T> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
}

pub fn attention_backward<T: Real>(
    grad_out: &Tensor<T>,
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    dims: AttentionDims,
) -> Result<AttentionGrads<T>> {
    dims.check(q, k, v)?;
    if grad_out.shape() != v.shape() {
        return config_err("attention backward: grad shape mismatch");
    }
    let scale = T::one() / T::of(dims.key_dim as f64).sqrt();
    let mut gq = Tensor::zeros(q.shape());
    let mut gk = Tensor::zeros(k.shape());
    let mut gv = Tensor::zeros(v.shape());
    for n in 0..q.n() {
        for h in 0..dims.heads {
            let qm = head_tokens(q, n, h, dims.key_dim);
            let km = head_tokens(k, n, h, dims.key_dim);
            let vm = head_tokens(v, n, h, dims.value_dim);
            let go = head_tokens(grad_out, n, h, dims.value_dim);
            let p = head_probs(&qm, &km, dims.key_dim)?;
            let dv = matmul(&p.transpose(), &go)?;
            let dp = matmul(&go, &vm.transpose())?;
            let mut ds = Matrix::new(p.rows, p.cols, softmax_rows_backward(&dp.data, &p.data, p.cols)?)?;
            for x in &mut ds.data {
                *x = *x * scale;
            }
            let dq = matmul(&ds, &km)?;
            let dk = matmul(&ds.transpose(), &qm)?;
            scatter_head(&mut gq, &dq, n, h, dims.key_dim);
            scatter_head(&mut gk, &dk, n, h, dims.key_dim);
            scatter_head(&mut gv, &dv, n, h, dims.value_dim);
        }
    }
    Ok(AttentionGrads { q: gq, k: gk, v: gv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::random;

    #[test]
    fn equal_keys_average_values() {
        let dims = AttentionDims {
            heads: 2,
            key_dim: 3,
            value_dim: 2,
        };
        let q = random::<f64>([1, 6, 2, 3], 1);
        let k = Tensor::zeros([1, 6, 2, 3]);
        let v = random::<f64>([1, 4, 2, 3], 2);
        let o = attention(&q, &k, &v, dims).unwrap();
        for c in 0..4 {
            let mean = v.plane(0, c).iter().sum::<f64>() / 6.0;
            assert!(o.plane(0, c).iter().all(|&x| (x - mean).abs() < 1e-12));
        }
    }

    #[test]
    fn two_tokens_closed_form() {
        // one head, key_dim 1, value_dim 1, tokens at w = 0, 1
        let dims = AttentionDims {
            heads: 1,
            key_dim: 1,
            value_dim: 1,
        };
        let q = Tensor::new([1, 1, 1, 2], vec![0.5f64, -1.0]).unwrap();
        let k = Tensor::new([1, 1, 1, 2], vec![2.0, 1.0]).unwrap();
        let v = Tensor::new([1, 1, 1, 2], vec![3.0, -4.0]).unwrap();
        let o = attention(&q, &k, &v, dims).unwrap();
        for t in 0..2 {
            let l0 = q.data()[t] * k.data()[0];
            let l1 = q.data()[t] * k.data()[1];
            let p0 = 1.0 / (1.0 + (l1 - l0).exp());
            let expect = p0 * 3.0 + (1.0 - p0) * -4.0;
            assert!((o.data()[t] - expect).abs() < 1e-12);
        }
    }
}
