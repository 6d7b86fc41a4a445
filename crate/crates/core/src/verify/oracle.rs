use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::{self, reference, AttentionDims, BatchNormParams, ConvKind, ConvSpec, Matrix, Shape, Tensor};

/// Operators with an optimized kernel and a naive counterpart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpId {
    Conv2d,
    /// Compares the deliberately broken conv kernel with the oracle. Exists
    /// to prove the sweep catches indexing bugs; it is expected to fail.
    Conv2dMutated,
    BatchNorm,
    Identity,
    Relu6,
    Sigmoid,
    Softmax,
    AvgPool,
    Upsample,
    Matmul,
    Concat,
    Add,
    Hadamard,
    Attention,
    /// Two tokens against a closed-form softmax over two logits.
    AttentionTwoToken,
}

impl OpId {
    /// Every operator with a correct optimized path.
    pub const ALL: [OpId; 14] = [
        OpId::Conv2d,
        OpId::BatchNorm,
        OpId::Identity,
        OpId::Relu6,
        OpId::Sigmoid,
        OpId::Softmax,
        OpId::AvgPool,
        OpId::Upsample,
        OpId::Matmul,
        OpId::Concat,
        OpId::Add,
        OpId::Hadamard,
        OpId::Attention,
        OpId::AttentionTwoToken,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub op: OpId,
    pub seed: u64,
    pub trials: usize,
    pub tolerance: f64,
}

impl OracleCase {
    pub fn new(op: OpId, seed: u64) -> Self {
        Self {
            op,
            seed,
            trials: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub op: OpId,
    pub trials: usize,
    pub worst_diff: f64,
    /// Trial seed and input shape of the worst trial.
    pub worst_seed: u64,
    pub worst_shape: Shape,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub ops: Vec<OpReport>,
    pub passed: bool,
}

impl OracleReport {
    pub fn failures(&self) -> impl Iterator<Item = &OpReport> {
        self.ops.iter().filter(|o| !o.passed)
    }
}

/// Runs every case's trials (in parallel) and keeps the worst 32-bit
/// difference per operator.
pub fn oracle_sweep(cases: &[OracleCase]) -> Result<OracleReport> {
    let mut ops = Vec::with_capacity(cases.len());
    for case in cases {
        if case.trials == 0 {
            return config_err(format!("oracle case {:?} has no trials", case.op));
        }
        let trials: Vec<(f64, u64, Shape)> = (0..case.trials as u64)
            .into_par_iter()
            .map(|t| {
                let seed = case.seed.wrapping_mul(1_000_003).wrapping_add(t);
                let (diff, shape) = trial(case.op, seed)?;
                Ok((diff, seed, shape))
            })
            .collect::<Result<_>>()?;
        let (worst_diff, worst_seed, worst_shape) =
            trials
                .into_iter()
                .fold((-1.0, 0, [0; 4]), |acc, t| if t.0 > acc.0 { t } else { acc });
        ops.push(OpReport {
            op: case.op,
            trials: case.trials,
            worst_diff,
            worst_seed,
            worst_shape,
            passed: worst_diff < case.tolerance,
        });
    }
    let passed = ops.iter().all(|o| o.passed);
    Ok(OracleReport { ops, passed })
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn rand_shape(rng: &mut ChaCha8Rng, c_max: usize, hw_max: usize) -> Shape {
    [
        rng.gen_range(1..=2),
        rng.gen_range(1..=c_max),
        rng.gen_range(1..=hw_max),
        rng.gen_range(1..=hw_max),
    ]
}

fn diff(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    Ok(a.max_abs_diff(b)? as f64)
}

fn slice_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

fn random_conv(rng: &mut ChaCha8Rng) -> (ConvSpec, Shape) {
    let kind = [ConvKind::Dense, ConvKind::Depthwise, ConvKind::Pointwise][rng.gen_range(0..3)];
    let cin = rng.gen_range(1..=6);
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let stride = rng.gen_range(1..=2);
    let spec = match kind {
        ConvKind::Dense => ConvSpec::dense(cin, rng.gen_range(1..=6), k, stride),
        ConvKind::Depthwise => ConvSpec::depthwise(cin, k, stride),
        ConvKind::Pointwise => ConvSpec::pointwise(cin, rng.gen_range(1..=6)),
    };
    let h = rng.gen_range(spec.kernel.0.max(2)..=11);
    let w = rng.gen_range(spec.kernel.1.max(2)..=11);
    (spec, [rng.gen_range(1..=2), cin, h, w])
}

/// One seeded trial: `(max abs diff, input shape)`.
fn trial(op: OpId, seed: u64) -> Result<(f64, Shape)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    match op {
        OpId::Conv2d | OpId::Conv2dMutated => {
            let (spec, shape) = random_conv(rng);
            // the mirrored kernel is invisible for 1×1 filters
            let spec = if op == OpId::Conv2dMutated && spec.kernel == (1, 1) {
                ConvSpec::dense(spec.in_channels, spec.in_channels, 3, 1)
            } else {
                spec
            };
            let x = rand_tensor(rng, shape);
            let w = rand_tensor(rng, spec.weight_shape());
            let fast = if op == OpId::Conv2d {
                tensor::conv2d(&x, &w, &spec)?
            } else {
                tensor::conv::conv2d_mutated(&x, &w, &spec)?
            };
            Ok((diff(&fast, &reference::conv2d(&x, &w, &spec)?)?, shape))
        }
        OpId::BatchNorm => {
            let shape = rand_shape(rng, 8, 9);
            let c = shape[1];
            let mut v = |lo: f32, hi: f32| (0..c).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>();
            let p = BatchNormParams {
                gamma: v(0.5, 1.5),
                beta: v(-0.5, 0.5),
                mean: v(-0.5, 0.5),
                var: v(0.1, 2.0),
                eps: 1e-5,
            };
            let x = rand_tensor(rng, shape);
            Ok((
                diff(&tensor::batchnorm_infer(&x, &p)?, &reference::batchnorm_infer(&x, &p)?)?,
                shape,
            ))
        }
        OpId::Identity => {
            let shape = rand_shape(rng, 8, 9);
            let x = rand_tensor(rng, shape);
            Ok((diff(&x.map(|v| v), &x)?, shape))
        }
        OpId::Relu6 | OpId::Sigmoid => {
            let shape = rand_shape(rng, 8, 9);
            let x = rand_tensor(rng, shape).map(|v| v * 10.0);
            let d = if op == OpId::Relu6 {
                diff(&tensor::relu6(&x), &reference::relu6(&x))?
            } else {
                diff(&tensor::sigmoid(&x), &reference::sigmoid(&x))?
            };
            Ok((d, shape))
        }
        OpId::Softmax => {
            let (rows, len) = (rng.gen_range(1..=8), rng.gen_range(1..=70));
            let m: Vec<f32> = (0..rows * len).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let fast = tensor::softmax_rows(&m, len)?;
            Ok((slice_diff(&fast, &reference::softmax_rows(&m, len)), [1, 1, rows, len]))
        }
        OpId::AvgPool => {
            let shape = rand_shape(rng, 6, 17);
            let (oh, ow) = (rng.gen_range(1..=shape[2]), rng.gen_range(1..=shape[3]));
            let x = rand_tensor(rng, shape);
            Ok((
                diff(
                    &tensor::adaptive_avg_pool(&x, oh, ow)?,
                    &reference::avg_pool(&x, oh, ow),
                )?,
                shape,
            ))
        }
        OpId::Upsample => {
            let shape = rand_shape(rng, 6, 9);
            let (oh, ow) = (rng.gen_range(shape[2]..=24), rng.gen_range(shape[3]..=24));
            let x = rand_tensor(rng, shape);
            Ok((
                diff(
                    &tensor::upsample_bilinear(&x, oh, ow)?,
                    &reference::upsample_bilinear(&x, oh, ow),
                )?,
                shape,
            ))
        }
        OpId::Matmul => {
            let (m, k, n) = (rng.gen_range(1..=20), rng.gen_range(1..=20), rng.gen_range(1..=20));
            let mut mat = |r, c| Matrix::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect());
            let (a, b) = (mat(m, k)?, mat(k, n)?);
            Ok((
                slice_diff(&tensor::matmul(&a, &b)?.data, &reference::matmul(&a, &b)?.data),
                [1, 1, m, k],
            ))
        }
        OpId::Concat => {
            let [n, _, h, w] = rand_shape(rng, 1, 7);
            let parts: Vec<Tensor<f32>> = (0..rng.gen_range(1..=4))
                .map(|_| {
                    let c = rng.gen_range(1..=5);
                    rand_tensor(rng, [n, c, h, w])
                })
                .collect();
            let refs: Vec<&Tensor<f32>> = parts.iter().collect();
            let fast = tensor::concat_channels(&refs)?;
            Ok((diff(&fast, &reference::concat_channels(&refs))?, fast.shape()))
        }
        OpId::Add | OpId::Hadamard => {
            let shape = rand_shape(rng, 8, 9);
            let (a, b) = (rand_tensor(rng, shape), rand_tensor(rng, shape));
            let d = if op == OpId::Add {
                diff(&tensor::add(&a, &b)?, &reference::add(&a, &b))?
            } else {
                diff(&tensor::hadamard(&a, &b)?, &reference::hadamard(&a, &b))?
            };
            Ok((d, shape))
        }
        OpId::Attention => {
            let dims = AttentionDims {
                heads: rng.gen_range(1..=4),
                key_dim: rng.gen_range(1..=8),
                value_dim: rng.gen_range(1..=8),
            };
            let (n, h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=4));
            let q = rand_tensor(rng, [n, dims.heads * dims.key_dim, h, w]);
            let k = rand_tensor(rng, [n, dims.heads * dims.key_dim, h, w]);
            let v = rand_tensor(rng, [n, dims.heads * dims.value_dim, h, w]);
            let fast = tensor::attention(&q, &k, &v, dims)?;
            Ok((diff(&fast, &reference::attention(&q, &k, &v, dims)?)?, q.shape()))
        }
        OpId::AttentionTwoToken => {
            let dims = AttentionDims {
                heads: rng.gen_range(1..=4),
                key_dim: rng.gen_range(1..=16),
                value_dim: rng.gen_range(1..=8),
            };
            let q = rand_tensor(rng, [1, dims.heads * dims.key_dim, 1, 2]);
            let k = rand_tensor(rng, [1, dims.heads * dims.key_dim, 1, 2]);
            let v = rand_tensor(rng, [1, dims.heads * dims.value_dim, 1, 2]);
            let fast = tensor::attention(&q, &k, &v, dims)?;
            Ok((diff(&fast, &two_token(&q, &k, &v, dims))?, q.shape()))
        }
    }
}

/// With two tokens the softmax row is `(σ(l0 − l1), σ(l1 − l0))`.
fn two_token(q: &Tensor<f32>, k: &Tensor<f32>, v: &Tensor<f32>, d: AttentionDims) -> Tensor<f32> {
    let mut out = Tensor::zeros(v.shape());
    let scale = 1.0 / (d.key_dim as f64).sqrt();
    for h in 0..d.heads {
        let logit = |i: usize, j: usize| {
            (0..d.key_dim)
                .map(|c| q.at(0, h * d.key_dim + c, 0, i) as f64 * k.at(0, h * d.key_dim + c, 0, j) as f64)
                .sum::<f64>()
                * scale
        };
        for i in 0..2 {
            let p0 = 1.0 / (1.0 + (logit(i, 1) - logit(i, 0)).exp());
            for e in 0..d.value_dim {
                let c = h * d.value_dim + e;
                let y = p0 * v.at(0, c, 0, 0) as f64 + (1.0 - p0) * v.at(0, c, 0, 1) as f64;
                let idx = out.index(0, c, 0, i);
                out.data_mut()[idx] = y as f32;
            }
        }
    }
    out
}
