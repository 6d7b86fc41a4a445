//! Static cost model and latency microbenchmark.
//!
//! Counting never executes the graph. MACs follow the usual convention: a
//! convolution costs `kh·kw·cin_per_group·cout` per output pixel, a linear
//! layer `in·out`, and attention the two token matmuls. Everything else
//! (BN, bias, activations, adds, pooling, resizing, softmax) lands in a
//! separate `minor_ops` bucket at one op per element produced. The headline
//! `gflops` is `macs / 1e9`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::{Act, Graph, Model, ModelConfig, ModuleTag, Op, ParamStore};
use crate::tensor::{numel, Shape, Tensor};

pub const REPORT_SCHEMA: &str = "cfkit_report_v1";
pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_ITERS: usize = 50;

const ACT_ELEM_BYTES: u64 = std::mem::size_of::<f32>() as u64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCost {
    pub name: String,
    pub kind: String,
    pub module: ModuleTag,
    pub params: u64,
    pub macs: u64,
    pub minor_ops: u64,
    pub act_bytes: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Costs {
    pub params: u64,
    pub macs: u64,
    pub minor_ops: u64,
    pub act_bytes: u64,
}

impl Costs {
    fn add(&mut self, n: &NodeCost) {
        self.params += n.params;
        self.macs += n.macs;
        self.minor_ops += n.minor_ops;
        self.act_bytes += n.act_bytes;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollup {
    pub module: ModuleTag,
    #[serde(flatten)]
    pub costs: Costs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    #[serde(flatten)]
    pub costs: Costs,
    /// Non-trainable BN statistics, stored in weight files but not counted
    /// as parameters.
    pub buffers: u64,
    pub gflops: f64,
    /// `2 · macs`, for readers who count a MAC as two FLOPs.
    pub flops_2x: u64,
}

/// Work outside the graph, itemized but not part of the headline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtraCost {
    pub name: String,
    pub ops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub warmup_iters: usize,
    pub measure_iters: usize,
    pub median_ms: f64,
    pub p90_ms: f64,
    pub input_shape: Shape,
    pub thread_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub schema: String,
    pub name: String,
    pub input_shape: Option<Shape>,
    pub nodes: Vec<NodeCost>,
    pub rollups: Vec<Rollup>,
    pub totals: Totals,
    pub extras: Vec<ExtraCost>,
    pub latency: Option<LatencyRecord>,
}

impl CostReport {
    /// A report with no nodes: five zero rollups and zero totals.
    pub fn empty(name: impl Into<String>) -> Self {
        Self::from_nodes(name.into(), None, Vec::new(), 0, Vec::new())
    }

    fn from_nodes(
        name: String,
        input_shape: Option<Shape>,
        nodes: Vec<NodeCost>,
        buffers: u64,
        extras: Vec<ExtraCost>,
    ) -> Self {
        let rollups: Vec<Rollup> = ModuleTag::ALL
            .iter()
            .map(|&m| {
                let mut costs = Costs::default();
                nodes.iter().filter(|n| n.module == m).for_each(|n| costs.add(n));
                Rollup { module: m, costs }
            })
            .collect();
        let mut costs = Costs::default();
        nodes.iter().for_each(|n| costs.add(n));
        Self {
            schema: REPORT_SCHEMA.into(),
            name,
            input_shape,
            nodes,
            rollups,
            totals: Totals {
                costs,
                buffers,
                gflops: costs.macs as f64 / 1e9,
                flops_2x: 2 * costs.macs,
            },
            extras,
            latency: None,
        }
    }

    /// Combines a parameter fragment with a MAC fragment of the same graph.
    pub fn merge(&self, other: &CostReport) -> Result<CostReport> {
        if self.nodes.len() != other.nodes.len() {
            return config_err("cannot merge reports of different graphs");
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (a, b) in self.nodes.iter().zip(&other.nodes) {
            if a.name != b.name {
                return config_err(format!("cannot merge reports: node {} vs {}", a.name, b.name));
            }
            nodes.push(NodeCost {
                params: a.params + b.params,
                macs: a.macs + b.macs,
                minor_ops: a.minor_ops + b.minor_ops,
                act_bytes: a.act_bytes + b.act_bytes,
                ..a.clone()
            });
        }
        let mut extras = self.extras.clone();
        extras.extend(other.extras.iter().cloned());
        let mut out = Self::from_nodes(
            self.name.clone(),
            self.input_shape.or(other.input_shape),
            nodes,
            self.totals.buffers + other.totals.buffers,
            extras,
        );
        out.latency = self.latency.clone().or_else(|| other.latency.clone());
        Ok(out)
    }

    pub fn rollup(&self, module: ModuleTag) -> &Costs {
        &self
            .rollups
            .iter()
            .find(|r| r.module == module)
            .expect("every module has a rollup")
            .costs
    }
}

fn blank(graph: &Graph, f: impl Fn(usize) -> (u64, u64, u64, u64)) -> Vec<NodeCost> {
    graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(id, n)| {
            let (params, macs, minor_ops, act_bytes) = f(id);
            NodeCost {
                name: n.name.clone(),
                kind: n.op.kind().into(),
                module: n.module,
                params,
                macs,
                minor_ops,
                act_bytes,
            }
        })
        .collect()
}

/// Trainable element counts per node.
pub fn count_params(graph: &Graph, params: &ParamStore<f32>) -> Result<CostReport> {
    let mut trainable = vec![0u64; graph.nodes().len()];
    let mut buffers = 0u64;
    for (id, node) in graph.nodes().iter().enumerate() {
        for name in &node.params {
            let Some(entry) = params.get(name) else {
                return config_err(format!("node {} refers to missing parameter {name}", node.name));
            };
            if entry.trainable {
                trainable[id] += entry.tensor.len() as u64;
            } else {
                buffers += entry.tensor.len() as u64;
            }
        }
    }
    let nodes = blank(graph, |id| (trainable[id], 0, 0, 0));
    Ok(CostReport::from_nodes(
        "params".into(),
        None,
        nodes,
        buffers,
        Vec::new(),
    ))
}

/// Multiply-accumulates, minor ops and activation bytes for an input of
/// `input_shape`. Only the batch size may differ from the graph's nominal
/// input; other resolutions need a graph built for them.
pub fn count_macs(graph: &Graph, input_shape: Shape) -> Result<CostReport> {
    let nominal = graph.input_shape();
    if input_shape[0] == 0 || input_shape[1..] != nominal[1..] {
        return config_err(format!(
            "input shape {input_shape:?} does not match the graph input [N, {}, {}, {}]",
            nominal[1], nominal[2], nominal[3]
        ));
    }
    let batch = input_shape[0] as u64;
    let per_sample: Vec<(u64, u64, u64)> = graph.nodes().iter().map(|n| node_cost(graph, n)).collect();
    let nodes = blank(graph, |id| {
        let (macs, minor, elems) = per_sample[id];
        (0, batch * macs, batch * minor, batch * elems * ACT_ELEM_BYTES)
    });
    let extras = extras(graph, input_shape);
    Ok(CostReport::from_nodes(
        "macs".into(),
        Some(input_shape),
        nodes,
        0,
        extras,
    ))
}

/// `(macs, minor_ops, output elements)` of one node for a single sample.
fn node_cost(graph: &Graph, node: &crate::model::Node) -> (u64, u64, u64) {
    let out = per_sample(node.shape);
    let in_shape = |i: usize| graph.node(node.inputs[i]).shape;
    let act_ops = |act: &Act| if *act == Act::Identity { 0 } else { out };
    let (macs, minor) = match &node.op {
        Op::Input | Op::Concat | Op::Slice { .. } => (0, 0),
        Op::Conv { spec, bias, bn, act } => {
            let [_, _, h, w] = in_shape(0);
            let macs = spec.macs(h, w).expect("shapes were checked at build time");
            (macs, out * (*bias as u64 + *bn as u64) + act_ops(act))
        }
        Op::Linear {
            in_features,
            out_features,
            bias,
            act,
        } => ((in_features * out_features) as u64, out * *bias as u64 + act_ops(act)),
        Op::Add => (0, out * (node.inputs.len() as u64).saturating_sub(1)),
        Op::Mul | Op::ChannelScale | Op::Pool { .. } | Op::UpsampleLike => (0, out),
        Op::Activation(act) => (0, act_ops(act)),
        Op::Attention(d) => {
            let [_, _, h, w] = in_shape(0);
            let t = (h * w) as u64;
            let heads = d.heads as u64;
            (heads * t * t * (d.key_dim + d.value_dim) as u64, heads * t * t)
        }
    };
    (macs, minor, out)
}

fn per_sample(shape: Shape) -> u64 {
    (numel(&shape) / shape[0]) as u64
}

/// Edge preprocessing for 5-channel inputs and the final resize of
/// low-resolution logits to the input size.
fn extras(graph: &Graph, input_shape: Shape) -> Vec<ExtraCost> {
    let [n, c, h, w] = input_shape;
    let pixels = (n * h * w) as u64;
    let mut out = Vec::new();
    if c == 5 {
        // luma (3), two 3×3 stencils (2·6 nonzero taps), magnitude (3),
        // threshold (1), standardization of the five planes (5)
        out.push(ExtraCost {
            name: "gme_preprocess".into(),
            ops: pixels * 24,
        });
    }
    let logits = graph.node(graph.output()).shape;
    if logits[2] > 1 && (logits[2], logits[3]) != (h, w) {
        out.push(ExtraCost {
            name: "logit_upsample".into(),
            ops: pixels * logits[1] as u64 * 4,
        });
    }
    out
}

/// Parameters and MACs at the graph's nominal input.
pub fn profile(name: &str, graph: &Graph, params: &ParamStore<f32>) -> Result<CostReport> {
    let mut r = count_params(graph, params)?.merge(&count_macs(graph, graph.input_shape())?)?;
    r.name = name.into();
    Ok(r)
}

/// Latency measurements plus the logits of the last measured pass.
#[derive(Clone, Debug)]
pub struct LatencyRun {
    pub record: LatencyRecord,
    pub output: Tensor<f32>,
}

/// Times `iters` forward passes after `warmup` unmeasured ones on a seeded
/// uniform input in [-1, 1]. `threads = 0` uses the global rayon default.
pub fn bench_latency(
    graph: &Graph,
    params: &ParamStore<f32>,
    input_shape: Shape,
    warmup: usize,
    iters: usize,
    threads: usize,
    seed: u64,
) -> Result<LatencyRun> {
    if iters == 0 {
        return config_err("latency benchmark needs at least one measured iteration");
    }
    count_macs(graph, input_shape)?;
    let input = seeded_input(input_shape, seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        for _ in 0..warmup {
            crate::model::forward(graph, params, &input)?;
        }
        let mut samples = Vec::with_capacity(iters);
        let mut output = None;
        for _ in 0..iters {
            let t = Instant::now();
            let y = crate::model::forward(graph, params, &input)?;
            samples.push(t.elapsed().as_secs_f64() * 1e3);
            output = Some(y);
        }
        let (median_ms, p90_ms) = summarize(&mut samples);
        Ok(LatencyRun {
            record: LatencyRecord {
                warmup_iters: warmup,
                measure_iters: iters,
                median_ms,
                p90_ms,
                input_shape,
                thread_count: rayon::current_num_threads(),
            },
            output: output.expect("iters > 0"),
        })
    })
}

fn seeded_input(shape: Shape, seed: u64) -> Tensor<f32> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..numel(&shape)).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Median (mean of the middle pair for even counts) and nearest-rank p90.
fn summarize(samples: &mut [f64]) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2.0
    };
    let rank = (0.9 * n as f64).ceil() as usize;
    (median, samples[rank.max(1) - 1])
}

/// Component switches of one ablation row with its published cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub vit: bool,
    pub dw3x3: bool,
    pub dw1x1: bool,
    pub dwsep: bool,
    pub channel_attention: bool,
    pub gme: bool,
    pub published_gflops: f64,
    pub published_params_m: f64,
}

const fn row(flags: [bool; 6], published_gflops: f64, published_params_m: f64) -> AblationRow {
    let [vit, dw3x3, dw1x1, dwsep, channel_attention, gme] = flags;
    AblationRow {
        vit,
        dw3x3,
        dw1x1,
        dwsep,
        channel_attention,
        gme,
        published_gflops,
        published_params_m,
    }
}

const Y: bool = true;
const N: bool = false;

/// The component grid in published row order: BDC-only rows first, then
/// rows with the attention branch.
pub const ABLATION_GRID: [AblationRow; 11] = [
    row([N, Y, N, N, N, N], 0.55, 1.02),
    row([N, Y, Y, N, N, N], 0.55, 1.10),
    row([N, Y, Y, Y, N, N], 0.56, 1.29),
    row([N, Y, Y, Y, Y, N], 0.56, 1.38),
    row([N, Y, Y, Y, Y, Y], 0.56, 1.38),
    row([Y, N, N, N, N, N], 0.54, 1.41),
    row([Y, Y, N, N, N, N], 0.57, 1.42),
    row([Y, Y, Y, N, N, N], 0.57, 1.43),
    row([Y, Y, Y, Y, N, N], 0.58, 1.61),
    row([Y, Y, Y, Y, Y, N], 0.58, 1.68),
    row([Y, Y, Y, Y, Y, Y], 0.58, 1.68),
];

impl AblationRow {
    /// `base` with this row's switches; GME off means a 3-channel stem.
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        let t = &mut c.trans_bdc;
        t.vit = self.vit;
        t.dw3x3 = self.dw3x3;
        t.dw1x1 = self.dw1x1;
        t.dwsep = self.dwsep;
        t.channel_attention = self.channel_attention;
        c.input_channels = if self.gme { 5 } else { 3 };
        c
    }

    /// Check marks in column order: ViT, 3×3 dw, 1×1 dw, 3×3 dw-sep,
    /// channel attention, GME.
    pub fn flags(&self) -> [bool; 6] {
        [
            self.vit,
            self.dw3x3,
            self.dw1x1,
            self.dwsep,
            self.channel_attention,
            self.gme,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub params: u64,
    pub macs: u64,
    pub gflops: f64,
}

/// Parameters and GFLOPs of every grid row applied to `base`.
pub fn run_ablation(base: &ModelConfig, seed: u64) -> Result<Vec<AblationResult>> {
    ABLATION_GRID
        .iter()
        .map(|row| {
            let m = Model::build(&row.apply(base), seed)?;
            let r = profile("ablation", &m.graph, &m.params)?;
            Ok(AblationResult {
                row: *row,
                params: r.totals.costs.params,
                macs: r.totals.costs.macs,
                gflops: r.totals.gflops,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Usage(format!(
                "unknown report format {other:?} (expected json or csv)"
            ))),
        }
    }
}

pub const CSV_HEADER: [&str; 7] = ["name", "kind", "module", "params", "macs", "minor_ops", "act_bytes"];

#[derive(Serialize, Deserialize)]
struct CsvRow {
    name: String,
    kind: String,
    module: String,
    params: u64,
    macs: u64,
    minor_ops: u64,
    act_bytes: u64,
}

/// Renders `report` as JSON or CSV. The CSV has one row per node, then one
/// `rollup` row per module and a final `total` row.
pub fn emit_report(report: &CostReport, format: &str) -> Result<String> {
    match format.parse::<ReportFormat>()? {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let row = |name: &str, kind: &str, module: &str, c: &Costs| CsvRow {
                name: name.into(),
                kind: kind.into(),
                module: module.into(),
                params: c.params,
                macs: c.macs,
                minor_ops: c.minor_ops,
                act_bytes: c.act_bytes,
            };
            let csv_err = |e: csv::Error| Error::Usage(format!("csv: {e}"));
            for n in &report.nodes {
                let c = Costs {
                    params: n.params,
                    macs: n.macs,
                    minor_ops: n.minor_ops,
                    act_bytes: n.act_bytes,
                };
                w.serialize(row(&n.name, &n.kind, n.module.as_str(), &c))
                    .map_err(csv_err)?;
            }
            for r in &report.rollups {
                w.serialize(row(r.module.as_str(), "rollup", r.module.as_str(), &r.costs))
                    .map_err(csv_err)?;
            }
            w.serialize(row("total", "total", "", &report.totals.costs))
                .map_err(csv_err)?;
            let bytes = w.into_inner().map_err(|e| Error::Usage(format!("csv: {e}")))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

pub fn parse_report_json(text: &str) -> Result<CostReport> {
    let r: CostReport = serde_json::from_str(text)?;
    if r.schema != REPORT_SCHEMA {
        return Err(Error::Usage(format!(
            "report schema {:?}, expected {REPORT_SCHEMA:?}",
            r.schema
        )));
    }
    Ok(r)
}

/// Per-module rollups and totals read back from a CSV report.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvSummary {
    pub nodes: usize,
    pub rollups: Vec<(String, Costs)>,
    pub totals: Costs,
}

pub fn parse_report_csv(text: &str) -> Result<CsvSummary> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Usage(format!("csv: {e}")))?
        .iter()
        .map(String::from)
        .collect();
    if header != CSV_HEADER {
        return Err(Error::Usage(format!("unexpected csv header {header:?}")));
    }
    let mut out = CsvSummary {
        nodes: 0,
        rollups: Vec::new(),
        totals: Costs::default(),
    };
    let mut saw_total = false;
    for row in r.deserialize::<CsvRow>() {
        let row = row.map_err(|e| Error::Usage(format!("csv: {e}")))?;
        let c = Costs {
            params: row.params,
            macs: row.macs,
            minor_ops: row.minor_ops,
            act_bytes: row.act_bytes,
        };
        match row.kind.as_str() {
            "rollup" => out.rollups.push((row.name, c)),
            "total" => {
                out.totals = c;
                saw_total = true;
            }
            _ => out.nodes += 1,
        }
    }
    if !saw_total {
        return Err(Error::Usage("csv report has no total row".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, GraphBuilder, HeadKind};
    use crate::tensor::ConvSpec;

    fn single_conv(spec: ConvSpec, bias: bool, hw: usize) -> (Graph, ParamStore<f32>) {
        let mut b = GraphBuilder::new(0, 1e-5);
        let x = b.input([1, spec.in_channels, hw, hw]).unwrap();
        let y = b.conv("c", x, spec, bias, false, Act::Identity).unwrap();
        b.finish(y).unwrap()
    }

    #[test]
    fn dense_conv_params_closed_form() {
        let (g, p) = single_conv(ConvSpec::dense(16, 32, 3, 1), true, 8);
        assert_eq!(count_params(&g, &p).unwrap().totals.costs.params, 3 * 3 * 16 * 32 + 32);
    }

    #[test]
    fn pointwise_macs_closed_form() {
        let (g, _) = single_conv(ConvSpec::pointwise(16, 32), false, 8);
        let r = count_macs(&g, [1, 16, 8, 8]).unwrap();
        assert_eq!(r.totals.costs.macs, 16 * 32 * 64);
        assert_eq!(
            count_macs(&g, [3, 16, 8, 8]).unwrap().totals.costs.macs,
            3 * 16 * 32 * 64
        );
        assert!(matches!(count_macs(&g, [1, 16, 16, 16]), Err(Error::Config(_))));
    }

    #[test]
    fn depthwise_macs_use_one_input_channel_per_group() {
        let (g, _) = single_conv(ConvSpec::depthwise(8, 3, 1), false, 4);
        assert_eq!(count_macs(&g, [1, 8, 4, 4]).unwrap().totals.costs.macs, 9 * 8 * 16);
    }

    #[test]
    fn attention_macs_count_both_matmuls() {
        let cfg = ModelConfig::micro();
        let (g, _) = build_model(&cfg, 0).unwrap();
        let r = count_macs(&g, g.input_shape()).unwrap();
        let mix = r.nodes.iter().find(|n| n.name == "trans_bdc.block0.attn.mix").unwrap();
        let t = (cfg.bottleneck_size().0 * cfg.bottleneck_size().1) as u64;
        assert_eq!(mix.macs, 4 * t * t * (16 + 32));
    }

    #[test]
    fn rollups_are_additive() {
        let m = crate::model::Model::build(&ModelConfig::micro(), 1).unwrap();
        let r = profile("micro", &m.graph, &m.params).unwrap();
        assert_eq!(r.rollups.len(), 5);
        let mut sum = Costs::default();
        for ro in &r.rollups {
            sum.params += ro.costs.params;
            sum.macs += ro.costs.macs;
            sum.minor_ops += ro.costs.minor_ops;
            sum.act_bytes += ro.costs.act_bytes;
        }
        assert_eq!(sum, r.totals.costs);
        assert_eq!(r.totals.costs.params, m.params.num_params() as u64);
        assert_eq!(r.totals.buffers, m.params.num_buffers() as u64);
    }

    #[test]
    fn empty_report_is_valid() {
        let r = CostReport::empty("none");
        assert_eq!(r.totals.costs, Costs::default());
        assert_eq!(r.rollups.len(), 5);
        let json = emit_report(&r, "json").unwrap();
        assert_eq!(parse_report_json(&json).unwrap(), r);
        let csv = parse_report_csv(&emit_report(&r, "csv").unwrap()).unwrap();
        assert_eq!(csv.nodes, 0);
        assert_eq!(csv.totals, Costs::default());
    }

    #[test]
    fn json_and_csv_agree_on_totals() {
        let m = crate::model::Model::build(&ModelConfig::micro(), 2).unwrap();
        let r = profile("micro", &m.graph, &m.params).unwrap();
        let back = parse_report_json(&emit_report(&r, "json").unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = parse_report_csv(&emit_report(&back, "csv").unwrap()).unwrap();
        assert_eq!(csv.totals, r.totals.costs);
        assert_eq!(csv.nodes, r.nodes.len());
        let rollups: Vec<_> = r.rollups.iter().map(|x| (x.module.to_string(), x.costs)).collect();
        assert_eq!(csv.rollups, rollups);
    }

    #[test]
    fn unknown_format_is_usage_error() {
        assert!(matches!(
            emit_report(&CostReport::empty("x"), "xml"),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(summarize(&mut [4.0]), (4.0, 4.0));
        let mut v: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        assert_eq!(summarize(&mut v), (5.5, 9.0));
    }

    #[test]
    fn bench_rejects_zero_iters_and_is_deterministic() {
        let mut cfg = ModelConfig::micro();
        cfg.head = HeadKind::Cls;
        let m = crate::model::Model::build(&cfg, 3).unwrap();
        let shape = m.graph.input_shape();
        assert!(matches!(
            bench_latency(&m.graph, &m.params, shape, 0, 0, 1, 0),
            Err(Error::Config(_))
        ));
        let a = bench_latency(&m.graph, &m.params, shape, 0, 1, 1, 9).unwrap();
        let b = bench_latency(&m.graph, &m.params, shape, 1, 2, 2, 9).unwrap();
        assert_eq!(a.record.median_ms, a.record.p90_ms);
        assert_eq!(a.record.thread_count, 1);
        assert_eq!(a.output, b.output);
    }

    #[test]
    fn ablation_rows_grow_and_gme_costs_only_stem_channels() {
        let res = run_ablation(&ModelConfig::micro(), 0).unwrap();
        assert_eq!(res.len(), 11);
        for half in [&res[..4], &res[5..10]] {
            assert!(half
                .windows(2)
                .all(|w| w[0].params < w[1].params && w[0].macs <= w[1].macs));
        }
        assert_eq!(res[4].params - res[3].params, 2 * 9 * 16);
        assert_eq!(res[10].params - res[9].params, 2 * 9 * 16);
        assert!(res[10].macs > res[9].macs);
    }
}
