//! Block-level entry points over a built graph.
//!
//! Each function seeds the node that feeds a block and evaluates only that
//! block, so any block can be run in isolation on arbitrary inputs.

use super::build::build_model;
use super::config::{HeadKind, ModelConfig};
use super::exec::{evaluate, forward};
use super::graph::Graph;
use super::params::ParamStore;
use crate::error::{config_err, Result};
use crate::gme::{GmeStack, ImageU8};
use crate::tensor::{upsample_bilinear, Real, Tensor};

/// A configuration with its graph and parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub graph: Graph,
    pub params: ParamStore<f32>,
}

impl Model {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let (graph, params) = build_model(config, seed)?;
        Ok(Self {
            config: config.clone(),
            graph,
            params,
        })
    }

    pub fn forward(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        forward(&self.graph, &self.params, input)
    }
}

/// The four pyramid taps and the pooled, concatenated bottleneck input.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T = f32> {
    pub scales: Vec<Tensor<T>>,
    pub x_f: Tensor<T>,
}

fn run<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    seeds: &[(&str, &Tensor<T>)],
    target: &str,
) -> Result<Tensor<T>> {
    let seeds = seeds
        .iter()
        .map(|(m, t)| Ok((graph.mark(m)?, (*t).clone())))
        .collect::<Result<Vec<_>>>()?;
    let mut out = evaluate(graph, params, &seeds, &[graph.mark(target)?])?;
    Ok(out.pop().expect("one target"))
}

pub fn tpem_forward<T: Real>(graph: &Graph, params: &ParamStore<T>, x: &Tensor<T>) -> Result<FeaturePyramid<T>> {
    let expect = graph.input_shape();
    if x.shape()[1..] != expect[1..] {
        return config_err(format!(
            "tpem input {:?} does not match the configured [N, {}, {}, {}]",
            x.shape(),
            expect[1],
            expect[2],
            expect[3]
        ));
    }
    let mut targets = Vec::new();
    let mut i = 1;
    while let Ok(id) = graph.mark(&format!("s{i}")) {
        targets.push(id);
        i += 1;
    }
    targets.push(graph.mark("x_f")?);
    let mut out = evaluate(graph, params, &[(graph.input(), x.clone())], &targets)?;
    let x_f = out.pop().expect("x_f target");
    Ok(FeaturePyramid { scales: out, x_f })
}

/// Branched depthwise convolutions with channel attention of block `block`.
pub fn bdc_forward<T: Real>(graph: &Graph, params: &ParamStore<T>, block: usize, x_f: &Tensor<T>) -> Result<Tensor<T>> {
    let p = format!("trans_bdc.block{block}");
    run(graph, params, &[(&format!("{p}.input"), x_f)], &format!("{p}.bdc"))
}

/// Multi-head attention branch (with its residual) of block `block`.
pub fn attention_forward<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    block: usize,
    x_f: &Tensor<T>,
) -> Result<Tensor<T>> {
    let p = format!("trans_bdc.block{block}");
    run(graph, params, &[(&format!("{p}.input"), x_f)], &format!("{p}.vit"))
}

/// One full bottleneck block: fused branches followed by the FFN.
pub fn trans_bdc_block_forward<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    block: usize,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let p = format!("trans_bdc.block{block}");
    run(graph, params, &[(&format!("{p}.input"), x)], &format!("{p}.output"))
}

/// All bottleneck blocks in sequence.
pub fn trans_bdc_forward<T: Real>(graph: &Graph, params: &ParamStore<T>, x_f: &Tensor<T>) -> Result<Tensor<T>> {
    run(graph, params, &[("x_f", x_f)], "x_f2")
}

/// Feature merging at pyramid scale `scale` (0 = finest).
pub fn fmm_forward<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    scale: usize,
    s_i: &Tensor<T>,
    x_f2: &Tensor<T>,
) -> Result<Tensor<T>> {
    run(
        graph,
        params,
        &[(&format!("s{}", scale + 1), s_i), ("x_f2", x_f2)],
        &format!("fmm{scale}"),
    )
}

/// Segmentation logits at the finest FMM resolution from the four FMM
/// outputs, finest first.
pub fn seg_head_forward<T: Real>(graph: &Graph, params: &ParamStore<T>, fmm: &[Tensor<T>]) -> Result<Tensor<T>> {
    let names: Vec<String> = (0..fmm.len()).map(|i| format!("fmm{i}")).collect();
    if graph.mark(&format!("fmm{}", fmm.len())).is_ok() || fmm.is_empty() {
        return config_err(format!("segmentation head needs every FMM scale, got {}", fmm.len()));
    }
    let seeds: Vec<(&str, &Tensor<T>)> = names.iter().map(String::as_str).zip(fmm).collect();
    run(graph, params, &seeds, "logits")
}

pub fn cls_head_forward<T: Real>(graph: &Graph, params: &ParamStore<T>, x_f2: &Tensor<T>) -> Result<Tensor<T>> {
    graph.find("cls_head.fc")?;
    run(graph, params, &[("x_f2", x_f2)], "logits")
}

/// Runs the whole network in the given mode, which must match the
/// configured head.
pub fn full_forward(model: &Model, stack: &GmeStack, mode: HeadKind) -> Result<Tensor<f32>> {
    if mode != model.config.head || mode == HeadKind::None {
        return config_err(format!("model head is {:?}, requested {:?}", model.config.head, mode));
    }
    if stack.channels() != model.config.input_channels {
        return config_err(format!(
            "input_channels conflict: model expects {}, input has {}",
            model.config.input_channels,
            stack.channels()
        ));
    }
    model.forward(&stack.tensor)
}

/// Class map of an image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<u32>,
}

/// Upsamples `[1, K, h, w]` logits to `out_h × out_w` and takes the
/// per-pixel argmax (lowest index among ties).
pub fn logits_to_mask<T: Real>(logits: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Mask> {
    if logits.n() != 1 {
        return config_err("mask extraction expects a single image");
    }
    let up = upsample_bilinear(logits, out_h, out_w)?;
    let hw = out_h * out_w;
    let classes = (0..hw)
        .map(|p| {
            let mut best = 0;
            for k in 1..up.c() {
                if up.data()[k * hw + p] > up.data()[best * hw + p] {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    Ok(Mask {
        width: out_w,
        height: out_h,
        classes,
    })
}

/// Fixed color of class `k`: hue advances by the golden ratio conjugate.
pub fn palette(k: u32) -> [u8; 3] {
    let h = (k as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.65, 0.95);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

impl Mask {
    pub fn to_image(&self) -> ImageU8 {
        ImageU8::from_fn(self.width, self.height, |x, y| {
            palette(self.classes[y * self.width + x])
        })
        .expect("mask is non-empty")
    }
}
