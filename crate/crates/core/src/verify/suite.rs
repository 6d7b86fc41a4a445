use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{evaluation_point, gradcheck, linear_probe, GradCheckCase};
use super::oracle::{oracle_sweep, OpId, OracleCase};
use crate::analysis::{count_macs, profile, run_ablation};
use crate::error::{Error, Result};
use crate::gme::{build_gme_stack, gme_channels, grayscale, normalize_rgb, GmeOptions, ImageU8};
use crate::model::{
    attention_forward, bdc_forward, build_model, trans_bdc_block_forward, weights, HeadKind, Model, ModelConfig,
    ModuleTag,
};
use crate::tensor::{self, ConvSpec, Tensor};

pub const SUITES: [&str; 5] = ["tensor", "gme", "blocks", "analysis", "all"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type Check = (&'static str, fn(u64) -> Result<(bool, String)>);

/// Runs every check of `suite` with the given seed. A check that errors
/// counts as failed with the error as its detail.
pub fn run_invariant_suite(suite: &str, seed: u64) -> Result<SuiteReport> {
    let groups: Vec<(&str, &[Check])> = match suite {
        "tensor" => vec![("tensor", TENSOR)],
        "gme" => vec![("gme", GME)],
        "blocks" => vec![("blocks", BLOCKS)],
        "analysis" => vec![("analysis", ANALYSIS)],
        "all" => vec![
            ("tensor", TENSOR),
            ("gme", GME),
            ("blocks", BLOCKS),
            ("analysis", ANALYSIS),
        ],
        other => {
            return Err(Error::Usage(format!(
                "unknown suite {other:?}, expected one of {}",
                SUITES.join(", ")
            )))
        }
    };
    let mut checks = Vec::new();
    for (group, list) in groups {
        for (name, f) in list {
            let (passed, detail) = f(seed).unwrap_or_else(|e| (false, format!("error: {e}")));
            checks.push(CheckResult {
                suite: group.into(),
                name: (*name).into(),
                passed,
                detail,
            });
        }
    }
    Ok(SuiteReport {
        suite: suite.into(),
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng, scale: f32) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

const TENSOR: &[Check] = &[
    ("operator oracles, 100 trials each", |seed| {
        let cases: Vec<_> = OpId::ALL.iter().map(|&op| OracleCase::new(op, seed)).collect();
        let r = oracle_sweep(&cases)?;
        let worst = r.ops.iter().map(|o| o.worst_diff).fold(0.0, f64::max);
        let failing: Vec<_> = r.failures().map(|o| format!("{:?}", o.op)).collect();
        Ok((r.passed, format!("worst diff {worst:.2e}; failing {failing:?}")))
    }),
    ("mutated conv is caught", |seed| {
        let r = oracle_sweep(&[OracleCase::new(OpId::Conv2dMutated, seed)])?;
        Ok((!r.passed, format!("worst diff {:.2e}", r.ops[0].worst_diff)))
    }),
    ("softmax rows sum to one", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<f32> = (0..64 * 37).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let p = tensor::softmax_rows(&m, 37)?;
        let worst = p
            .chunks(37)
            .map(|r| (r.iter().sum::<f32>() - 1.0).abs())
            .fold(0.0, f32::max);
        let positive = p.iter().all(|&v| v >= 0.0);
        Ok((worst < 1e-6 && positive, format!("max |sum - 1| {worst:.2e}")))
    }),
    ("relu6 output within [0, 6]", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = tensor::relu6(&random([2, 4, 9, 9], &mut rng, 20.0));
        Ok((y.data().iter().all(|&v| (0.0..=6.0).contains(&v)), String::new()))
    }),
    ("sigmoid output within (0, 1)", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = tensor::sigmoid(&random([2, 4, 9, 9], &mut rng, 15.0));
        Ok((y.data().iter().all(|&v| v > 0.0 && v < 1.0), String::new()))
    }),
    ("conv output size follows the floor rule", |_| {
        let mut ok = true;
        for (h, k, s) in [(512, 3, 2), (255, 5, 2), (7, 3, 2), (9, 5, 1), (3, 3, 1)] {
            let spec = ConvSpec::dense(1, 1, k, s);
            ok &= spec.output_hw(h, h)? == ((h + 2 * (k / 2) - k) / s + 1, (h + 2 * (k / 2) - k) / s + 1);
        }
        Ok((ok, String::new()))
    }),
    ("kernels give equal bits on 1 and 3 threads", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random([1, 16, 32, 32], &mut rng, 1.0);
        let spec = ConvSpec::dense(16, 24, 3, 1);
        let w = random(spec.weight_shape(), &mut rng, 1.0);
        let run = |n| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool");
            pool.install(|| tensor::conv2d(&x, &w, &spec))
        };
        Ok((run(1)? == run(3)?, String::new()))
    }),
];

fn test_image(seed: u64) -> ImageU8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<u8> = (0..48 * 40).map(|_| rng.gen()).collect();
    ImageU8::from_fn(48, 40, |x, y| {
        let edge = if x > 20 { 200 } else { 30 };
        [edge, noise[y * 48 + x] / 4, (x * 5) as u8]
    })
    .expect("non-empty image")
}

const GME: &[Check] = &[
    ("planes lie in [0, 1]", |seed| {
        let planes = gme_channels(&test_image(seed), &GmeOptions::default())?;
        let gray = grayscale(&test_image(seed));
        let ok = planes
            .data()
            .iter()
            .chain(gray.data())
            .all(|&v| (0.0..=1.0).contains(&v));
        Ok((ok, String::new()))
    }),
    ("edge map is binary", |seed| {
        let planes = gme_channels(&test_image(seed), &GmeOptions::default())?;
        let ok = planes.plane(0, 4).iter().all(|&v| v == 0.0 || v == 1.0);
        let edges = planes.plane(0, 4).iter().filter(|&&v| v == 1.0).count();
        Ok((ok && edges > 0, format!("{edges} edge pixels")))
    }),
    ("uniform image has no gradient and no edges", |_| {
        let img = ImageU8::from_fn(16, 16, |_, _| [90, 90, 90])?;
        let planes = gme_channels(&img, &GmeOptions::default())?;
        let ok = planes.plane(0, 3).iter().chain(planes.plane(0, 4)).all(|&v| v == 0.0);
        Ok((ok, String::new()))
    }),
    ("three-channel path equals normalized RGB", |seed| {
        let img = test_image(seed);
        let stack = build_gme_stack(&img, 3, &GmeOptions::default())?;
        Ok((stack.tensor == normalize_rgb(&img), String::new()))
    }),
    ("first three GME channels equal normalized RGB", |seed| {
        let img = test_image(seed);
        let five = build_gme_stack(&img, 5, &GmeOptions::default())?.tensor;
        let three = normalize_rgb(&img);
        Ok((five.data()[..three.len()] == *three.data(), String::new()))
    }),
    ("preprocessing is deterministic", |seed| {
        let img = test_image(seed);
        let a = build_gme_stack(&img, 5, &GmeOptions::default())?;
        let b = build_gme_stack(&img, 5, &GmeOptions::default())?;
        Ok((a.tensor == b.tensor, String::new()))
    }),
];

fn head_none_micro(h: usize, w: usize) -> Result<ModelConfig> {
    let mut c = ModelConfig::micro();
    c.head = HeadKind::None;
    c.with_resolution(h, w)
}

const BLOCKS: &[Check] = &[
    (
        "pyramid strides, bottleneck grid and widths for 64k x 64m inputs",
        |_| {
            let mut bad = Vec::new();
            for k in 1..=8 {
                for m in 1..=8 {
                    let cfg = ModelConfig::seg().with_resolution(64 * k, 64 * m)?;
                    let (g, _) = build_model(&cfg, 0)?;
                    let shape = |mark: &str| g.mark(mark).map(|id| g.node(id).shape);
                    let mut ok = shape("x_f")? == [1, 208, k, m] && shape("x_f2")? == [1, 208, k, m];
                    for (i, (div, c)) in [(4, 16), (8, 32), (16, 64), (32, 96)].into_iter().enumerate() {
                        ok &= shape(&format!("s{}", i + 1))? == [1, c, 64 * k / div, 64 * m / div];
                        ok &= shape(&format!("fmm{i}"))? == [1, 160, 32 * k / div, 32 * m / div];
                    }
                    if !ok {
                        bad.push((k, m));
                    }
                }
            }
            Ok((bad.is_empty(), format!("mismatched grids {bad:?}")))
        },
    ),
    ("zeroed BDC branch halves its input", |seed| {
        let m = Model::build(&head_none_micro(128, 128)?, seed)?;
        let mut p = m.params.clone();
        p.zero_weights("trans_bdc.block0.bdc.");
        p.fill("trans_bdc.block0.bdc.ca.", ".bias", 0.0);
        let x = random([1, 208, 2, 2], &mut ChaCha8Rng::seed_from_u64(seed), 1.0);
        Ok((bdc_forward(&m.graph, &p, 0, &x)? == x.map(|v| 0.5 * v), String::new()))
    }),
    ("zeroed attention projection is the identity", |seed| {
        let m = Model::build(&head_none_micro(128, 128)?, seed)?;
        let mut p = m.params.clone();
        p.zero_weights("trans_bdc.block0.attn.proj");
        let x = random([1, 208, 2, 2], &mut ChaCha8Rng::seed_from_u64(seed), 1.0);
        Ok((attention_forward(&m.graph, &p, 0, &x)? == x, String::new()))
    }),
    ("fully zeroed bottleneck block scales by 1.5", |seed| {
        let m = Model::build(&head_none_micro(128, 128)?, seed)?;
        let mut p = m.params.clone();
        p.zero_weights("trans_bdc.block0.");
        p.fill("trans_bdc.block0.bdc.ca.", ".bias", 0.0);
        let x = random([1, 208, 2, 2], &mut ChaCha8Rng::seed_from_u64(seed), 1.0);
        Ok((
            trans_bdc_block_forward(&m.graph, &p, 0, &x)? == x.map(|v| 1.5 * v),
            String::new(),
        ))
    }),
    ("GME toggle keeps every parameter name and downstream shape", |seed| {
        let on = Model::build(&ModelConfig::micro(), seed)?;
        let mut cfg = ModelConfig::micro();
        cfg.input_channels = 3;
        let off = Model::build(&cfg, seed)?;
        let names = on.params.names().eq(off.params.names());
        let shapes = on
            .graph
            .nodes()
            .iter()
            .zip(off.graph.nodes())
            .skip(1)
            .all(|(a, b)| a.shape == b.shape);
        let delta = on.params.num_params() - off.params.num_params();
        Ok((
            names && shapes && delta == 2 * 9 * 16,
            format!("parameter delta {delta}"),
        ))
    }),
    ("gradient check validates itself on a linear layer", |seed| {
        let (g, p, x) = linear_probe(seed)?;
        let mut case = GradCheckCase::new(&g, &p, &x);
        case.seed = seed;
        let r = gradcheck(&case)?;
        Ok((
            r.max_rel_err() < 1e-9,
            format!("max relative error {:.2e}", r.max_rel_err()),
        ))
    }),
    ("gradient check on the classification head and FFN", |seed| {
        let mut cfg = ModelConfig::micro();
        cfg.head = HeadKind::Cls;
        let m = Model::build(&cfg, seed)?;
        let (p, x) = evaluation_point(&m.graph, &m.params.cast(), seed)?;
        let mut case = GradCheckCase::new(&m.graph, &p, &x);
        case.filter = vec![
            "cls_head".into(),
            "trans_bdc.block0.ffn".into(),
            "trans_bdc.block0.bdc.ca".into(),
        ];
        case.max_coords = 8;
        case.seed = seed;
        let r = gradcheck(&case)?;
        Ok((
            r.passed,
            format!(
                "{} coordinates, max relative error {:.2e}",
                r.coordinates(),
                r.max_rel_err()
            ),
        ))
    }),
];

fn published_count(cfg: ModelConfig, target_m: f64) -> Result<(bool, String)> {
    let m = Model::build(&cfg, 0)?;
    let n = m.params.num_params() as f64;
    let dev = n / (target_m * 1e6) - 1.0;
    Ok((
        dev.abs() <= 0.05,
        format!("{n} parameters ({:+.2}% vs {target_m}M)", dev * 100.0),
    ))
}

const ANALYSIS: &[Check] = &[
    ("rollups sum to totals", |seed| {
        let m = Model::build(&ModelConfig::seg(), seed)?;
        let r = profile("seg", &m.graph, &m.params)?;
        let sum = |f: fn(&crate::analysis::Costs) -> u64| r.rollups.iter().map(|x| f(&x.costs)).sum::<u64>();
        let t = &r.totals.costs;
        let ok = r.rollups.len() == ModuleTag::ALL.len()
            && sum(|c| c.params) == t.params
            && sum(|c| c.macs) == t.macs
            && sum(|c| c.act_bytes) == t.act_bytes
            && sum(|c| c.minor_ops) == t.minor_ops;
        Ok((ok, String::new()))
    }),
    ("counted parameters equal the store and the weight file", |seed| {
        let m = Model::build(&ModelConfig::micro(), seed)?;
        let r = profile("micro", &m.graph, &m.params)?;
        let bytes = weights::encode(&weights::records_of(&m.params))?;
        let serialized: usize = weights::decode(&bytes)?.iter().map(|r| r.data.len()).sum();
        let t = &r.totals;
        let ok = t.costs.params == m.params.num_params() as u64 && (t.costs.params + t.buffers) as usize == serialized;
        Ok((
            ok,
            format!(
                "{} parameters + {} buffers, {serialized} serialized",
                t.costs.params, t.buffers
            ),
        ))
    }),
    ("ablation components never decrease cost", |seed| {
        let rows = run_ablation(&ModelConfig::seg(), seed)?;
        let ok = [&rows[..5], &rows[5..]].iter().all(|half| {
            half.windows(2)
                .all(|w| w[0].params <= w[1].params && w[0].macs <= w[1].macs)
        });
        Ok((ok, String::new()))
    }),
    ("stem and pyramid MACs scale 4x when the side doubles", |seed| {
        let mut cfg = ModelConfig::seg();
        cfg.head = HeadKind::None;
        cfg.trans_bdc.num_blocks = 0;
        let macs = |side: usize| -> Result<u64> {
            let (g, _) = build_model(&cfg.clone().with_resolution(side, side)?, seed)?;
            let r = count_macs(&g, g.input_shape())?;
            Ok(r.rollup(ModuleTag::Stem).macs + r.rollup(ModuleTag::Tpem).macs)
        };
        let (a, b) = (macs(256)?, macs(512)?);
        Ok((b == 4 * a, format!("{a} -> {b}")))
    }),
    ("segmentation parameters within 5% of 1.68M", |_| {
        published_count(ModelConfig::seg(), 1.68)
    }),
    ("classification parameters within 5% of 1.79M", |_| {
        published_count(ModelConfig::cls(), 1.79)
    }),
];
