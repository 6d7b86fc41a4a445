use rayon::prelude::*;

use super::{Real, Tensor};
use crate::error::{config_err, Result};

/// Per-channel affine normalization with frozen running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub eps: T,
}

impl<T: Real> BatchNormParams<T> {
    pub fn identity(channels: usize, eps: T) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.mean.len() != c || self.var.len() != c {
            return config_err("batchnorm parameter vectors differ in length");
        }
        if !(self.eps >= T::zero()) {
            return config_err("batchnorm epsilon must be non-negative");
        }
        if self.var.iter().any(|&v| !(v >= T::zero())) {
            return config_err("batchnorm running variance must be >= 0");
        }
        Ok(())
    }

    /// `1 / sqrt(var + eps)` per channel.
    pub fn inv_std(&self) -> Vec<T> {
        self.var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect()
    }
}

/// `(x − μ_c) / sqrt(σ²_c + ε) · γ_c + β_c`
pub fn batchnorm_infer<T: Real>(input: &Tensor<T>, params: &BatchNormParams<T>) -> Result<Tensor<T>> {
    params.validate()?;
    if params.channels() != input.c() {
        return config_err(format!(
            "batchnorm has {} channels, input has {}",
            params.channels(),
            input.c()
        ));
    }
    let inv = params.inv_std();
    let c = input.c();
    let hw = input.h() * input.w();
    let mut out = input.clone();
    out.data_mut()
        .par_chunks_mut(hw.max(1))
        .enumerate()
        .for_each(|(i, plane)| {
            let ch = i % c;
            for v in plane {
                *v = (*v - params.mean[ch]) * inv[ch] * params.gamma[ch] + params.beta[ch];
            }
        });
    out.check_finite("batchnorm")?;
    Ok(out)
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batchnorm_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    params: &BatchNormParams<T>,
) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != input.shape() || params.channels() != input.c() {
        return config_err("batchnorm backward: shape mismatch");
    }
    let inv = params.inv_std();
    let c = input.c();
    let hw = input.h() * input.w();
    let mut gx = grad_out.clone();
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for (i, (gplane, xplane)) in gx
        .data_mut()
        .chunks_mut(hw.max(1))
        .zip(input.data().chunks(hw.max(1)))
        .enumerate()
    {
        let ch = i % c;
        for (g, &x) in gplane.iter_mut().zip(xplane) {
            gg[ch] = gg[ch] + *g * (x - params.mean[ch]) * inv[ch];
            gb[ch] = gb[ch] + *g;
            *g = *g * params.gamma[ch] * inv[ch];
        }
    }
    Ok(BatchNormGrads {
        input: gx,
        gamma: gg,
        beta: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::reference;
    use crate::tensor::testutil::random;

    #[test]
    fn unit_params_with_zero_eps_are_identity() {
        let x = random::<f32>([2, 3, 4, 4], 1);
        let y = batchnorm_infer(&x, &BatchNormParams::identity(3, 0.0)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn input_at_mean_yields_beta() {
        let mut p = BatchNormParams::identity(2, 1e-5f32);
        p.mean = vec![0.3, -2.0];
        p.var = vec![4.0, 0.5];
        p.gamma = vec![1.7, -0.2];
        p.beta = vec![0.25, 9.0];
        let x = Tensor::from_fn([1, 2, 3, 3], |[_, c, _, _]| p.mean[c]);
        let y = batchnorm_infer(&x, &p).unwrap();
        for c in 0..2 {
            assert!(y.plane(0, c).iter().all(|&v| v == p.beta[c]));
        }
    }

    #[test]
    fn matches_scalar_loop() {
        let x = random::<f32>([2, 5, 3, 7], 7);
        let r = random::<f32>([4, 5, 1, 1], 8);
        let p = BatchNormParams {
            gamma: r.data()[0..5].to_vec(),
            beta: r.data()[5..10].to_vec(),
            mean: r.data()[10..15].to_vec(),
            var: r.data()[15..20].iter().map(|v| v.abs() + 0.1).collect(),
            eps: 1e-5,
        };
        let a = batchnorm_infer(&x, &p).unwrap();
        let b = reference::batchnorm_infer(&x, &p).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
    }

    #[test]
    fn rejects_channel_mismatch_and_negative_variance() {
        let x = Tensor::<f32>::zeros([1, 3, 2, 2]);
        assert!(batchnorm_infer(&x, &BatchNormParams::identity(2, 1e-5)).is_err());
        let mut p = BatchNormParams::identity(3, 1e-5);
        p.var[1] = -1.0;
        assert!(batchnorm_infer(&x, &p).is_err());
    }
}
