use std::collections::BTreeSet;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::model::{
    backward, calibrate_batchnorm, evaluate_frozen, trace, Act, Graph, GraphBuilder, NodeId, ParamStore,
};
use crate::tensor::Tensor;

/// One finite-difference comparison of the parameter gradients of
/// `sum(output)` in 64-bit precision.
#[derive(Clone, Debug)]
pub struct GradCheckCase<'a> {
    pub graph: &'a Graph,
    pub params: &'a ParamStore<f64>,
    pub input: &'a Tensor<f64>,
    /// Only trainable parameters whose name contains one of these are
    /// sampled; empty selects all of them.
    pub filter: Vec<String>,
    pub h: f64,
    pub tolerance: f64,
    pub max_coords: usize,
    pub seed: u64,
}

impl<'a> GradCheckCase<'a> {
    pub fn new(graph: &'a Graph, params: &'a ParamStore<f64>, input: &'a Tensor<f64>) -> Self {
        Self {
            graph,
            params,
            input,
            filter: Vec::new(),
            h: 1e-5,
            tolerance: 1e-4,
            max_coords: 32,
            seed: 0,
        }
    }

    fn selects(&self, name: &str) -> bool {
        self.filter.is_empty() || self.filter.iter().any(|f| name.contains(f.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offender {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCoverage {
    pub name: String,
    pub sampled: usize,
    pub len: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub h: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub checked: Vec<TensorCoverage>,
    /// Parameters and buffers that were not sampled.
    pub excluded: Vec<String>,
    pub worst: Option<Offender>,
}

impl GradCheckReport {
    pub fn coordinates(&self) -> usize {
        self.checked.iter().map(|c| c.sampled).sum()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_err)
    }
}

pub(crate) fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Index 0 plus seeded uniform picks, `min(len, max)` in total.
fn coordinates(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut picked: BTreeSet<usize> = BTreeSet::from([0]);
    for i in sample(rng, len - 1, max - 1) {
        picked.insert(i + 1);
    }
    picked.into_iter().collect()
}

/// Nodes whose value depends on node `start`.
fn descendants(graph: &Graph, start: NodeId) -> Vec<bool> {
    let mut down = vec![false; graph.nodes().len()];
    down[start] = true;
    for id in start + 1..graph.nodes().len() {
        down[id] = graph.node(id).inputs.iter().any(|&i| down[i]);
    }
    down
}

/// Central differences on sampled coordinates of every selected parameter.
/// Each perturbation re-runs only the part of the graph downstream of the
/// parameter's node, with every relu6 held on its piece at the unperturbed
/// point, and the loss difference is summed elementwise.
pub fn gradcheck(case: &GradCheckCase) -> Result<GradCheckReport> {
    check_with(case, |_| {})
}

fn check_with(
    case: &GradCheckCase,
    tamper: impl FnOnce(&mut IndexMap<String, Tensor<f64>>),
) -> Result<GradCheckReport> {
    if case.h.is_nan() || case.h <= 0.0 || case.tolerance.is_nan() || case.tolerance <= 0.0 || case.max_coords == 0 {
        return config_err("gradcheck needs h > 0, tolerance > 0 and at least one coordinate");
    }
    let graph = case.graph;
    let tr = trace(graph, case.params, case.input)?;
    let ones = Tensor::full(tr.output().shape(), 1.0);
    let mut grads = backward(graph, case.params, &tr, &ones)?;
    tamper(&mut grads);

    let mut owner = std::collections::HashMap::new();
    for (id, node) in graph.nodes().iter().enumerate() {
        for p in &node.params {
            owner.insert(p.as_str(), id);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let mut excluded = Vec::new();
    let mut jobs = Vec::new();
    let mut checked = Vec::new();
    for (name, entry) in case.params.iter() {
        if !entry.trainable || !case.selects(name) {
            excluded.push(name.to_string());
            continue;
        }
        let Some(&node) = owner.get(name) else {
            return config_err(format!("parameter {name} belongs to no node"));
        };
        let coords = coordinates(entry.len(), case.max_coords, &mut rng);
        checked.push(TensorCoverage {
            name: name.to_string(),
            sampled: coords.len(),
            len: entry.len(),
            max_rel_err: 0.0,
        });
        jobs.extend(
            coords
                .into_iter()
                .map(|i| (checked.len() - 1, name.to_string(), node, i)),
        );
    }

    if checked.is_empty() {
        return config_err(format!("filter {:?} selects no trainable parameter", case.filter));
    }

    // Seeds for a partial re-run: every value that feeds the downstream
    // region from outside it.
    let out = graph.output();
    let frontier = |node: NodeId| -> Vec<(NodeId, Tensor<f64>)> {
        let down = descendants(graph, node);
        let mut seeds = BTreeSet::new();
        for id in node..=out {
            if down[id] {
                seeds.extend(graph.node(id).inputs.iter().copied().filter(|&i| !down[i]));
            }
        }
        seeds.into_iter().map(|i| (i, tr.value(i).clone())).collect()
    };

    let results: Vec<Result<(usize, Offender)>> = jobs
        .par_iter()
        .map_init(
            || case.params.clone(),
            |params, (slot, name, node, index)| {
                let seeds = frontier(*node);
                let mut side = |delta: f64| -> Result<Tensor<f64>> {
                    let v = &mut params.get_mut(name).expect("selected parameter").tensor.data_mut()[*index];
                    let orig = *v;
                    *v = orig + delta;
                    let y = evaluate_frozen(graph, params, &seeds, &[out], &tr);
                    params.get_mut(name).expect("selected parameter").tensor.data_mut()[*index] = orig;
                    Ok(y?.swap_remove(0))
                };
                let (hi, lo) = (side(case.h)?, side(-case.h)?);
                let diff: f64 = hi.data().iter().zip(lo.data()).map(|(a, b)| a - b).sum();
                let numeric = diff / (2.0 * case.h);
                let analytic = grads[name.as_str()].data()[*index];
                Ok((
                    *slot,
                    Offender {
                        name: name.clone(),
                        index: *index,
                        analytic,
                        numeric,
                        rel_err: rel_err(analytic, numeric),
                    },
                ))
            },
        )
        .collect();

    let mut worst: Option<Offender> = None;
    for r in results {
        let (slot, o) = r?;
        let cov = &mut checked[slot];
        cov.max_rel_err = cov.max_rel_err.max(o.rel_err);
        if worst.as_ref().is_none_or(|w| o.rel_err > w.rel_err) {
            worst = Some(o);
        }
    }
    let passed = worst.as_ref().is_none_or(|w| w.rel_err < case.tolerance);
    Ok(GradCheckReport {
        seed: case.seed,
        h: case.h,
        tolerance: case.tolerance,
        passed,
        checked,
        excluded,
        worst,
    })
}

/// BN statistics are floored at this variance during calibration.
pub const CALIBRATION_VAR_FLOOR: f64 = 0.1;
const CALIBRATION_BATCH: usize = 4;

/// A well-conditioned point for checking a freshly initialized network:
/// random BN scales and shifts, a seeded input in [-1, 1], and BN statistics
/// calibrated on a batch that starts with that input. Identity BN leaves
/// exact zeros in front of relu6 and lets sigmoid gates saturate.
pub fn evaluation_point(graph: &Graph, params: &ParamStore<f64>, seed: u64) -> Result<(ParamStore<f64>, Tensor<f64>)> {
    let [_, c, h, w] = graph.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = Tensor::from_fn([CALIBRATION_BATCH, c, h, w], |_| rng.gen_range(-1.0..1.0));
    let input = Tensor::from_fn([1, c, h, w], |[_, ci, hi, wi]| batch.at(0, ci, hi, wi));
    let mut p = params.clone();
    p.randomize_batchnorm(seed);
    calibrate_batchnorm(graph, &mut p, &batch, CALIBRATION_VAR_FLOOR)?;
    Ok((p, input))
}

/// A single fully connected layer on `[1, 8, 1, 1]`, whose summed output is
/// linear in every parameter.
pub fn linear_probe(seed: u64) -> Result<(Graph, ParamStore<f64>, Tensor<f64>)> {
    let mut b = GraphBuilder::new(seed, 1e-5);
    let x = b.input([1, 8, 1, 1])?;
    let y = b.linear("probe.fc", x, 4, true, Act::Identity)?;
    let (g, p) = b.finish(y)?;
    let input = Tensor::from_fn([1, 8, 1, 1], |[_, c, _, _]| (c as f64 - 3.5) / 4.0);
    Ok((g, p.cast(), input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HeadKind, Model, ModelConfig};

    #[test]
    fn linear_probe_agrees_to_roundoff() {
        let (g, p, x) = linear_probe(1).unwrap();
        let r = gradcheck(&GradCheckCase::new(&g, &p, &x)).unwrap();
        assert!(r.passed);
        assert_eq!(r.coordinates(), 8 * 4 + 4);
        assert!(r.max_rel_err() < 1e-9, "{:?}", r.worst);
    }

    #[test]
    fn filter_excludes_and_reports_coverage() {
        let (g, p, x) = linear_probe(2).unwrap();
        let mut case = GradCheckCase::new(&g, &p, &x);
        case.filter = vec!["bias".into()];
        let r = gradcheck(&case).unwrap();
        assert_eq!(r.checked.len(), 1);
        assert_eq!(r.checked[0].name, "probe.fc.bias");
        assert_eq!(r.excluded, vec!["probe.fc.weight".to_string()]);
    }

    #[test]
    fn coordinates_include_zero_and_respect_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = coordinates(1000, 32, &mut rng);
        assert_eq!(c.len(), 32);
        assert_eq!(c[0], 0);
        assert_eq!(coordinates(5, 32, &mut rng), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rejects_bad_step() {
        let (g, p, x) = linear_probe(3).unwrap();
        let mut case = GradCheckCase::new(&g, &p, &x);
        case.h = 0.0;
        assert!(gradcheck(&case).is_err());
    }

    #[test]
    fn cls_head_block_passes() {
        let mut cfg = ModelConfig::micro();
        cfg.head = HeadKind::Cls;
        let m = Model::build(&cfg, 4).unwrap();
        let (p, x) = evaluation_point(&m.graph, &m.params.cast(), 6).unwrap();
        let mut case = GradCheckCase::new(&m.graph, &p, &x);
        case.filter = vec!["cls_head".into(), "trans_bdc.block0.ffn".into()];
        let r = gradcheck(&case).unwrap();
        assert!(r.passed, "{:?}", r.worst);
    }

    #[test]
    fn attention_passes_on_four_tokens() {
        let mut cfg = ModelConfig::micro().with_resolution(128, 128).unwrap();
        cfg.head = HeadKind::Cls;
        let m = Model::build(&cfg, 5).unwrap();
        assert_eq!(m.graph.node(m.graph.mark("x_f").unwrap()).shape, [1, 208, 2, 2]);
        let (p, x) = evaluation_point(&m.graph, &m.params.cast(), 7).unwrap();
        let mut case = GradCheckCase::new(&m.graph, &p, &x);
        // A common key bias shifts every softmax row uniformly, so its
        // gradient is exactly zero and only round-off is left to compare.
        case.filter = ["attn.q.", "attn.k.weight", "attn.k.bn.weight", "attn.v.", "attn.proj"]
            .map(|f| format!("trans_bdc.block0.{f}"))
            .to_vec();
        let r = gradcheck(&case).unwrap();
        assert_eq!(r.checked.len(), 11, "{:?}", r.checked);
        assert!(r.passed, "{:?}", r.worst);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut cfg = ModelConfig::micro();
        cfg.head = HeadKind::Cls;
        let m = Model::build(&cfg, 4).unwrap();
        let (p, x) = evaluation_point(&m.graph, &m.params.cast(), 6).unwrap();
        let mut case = GradCheckCase::new(&m.graph, &p, &x);
        case.filter = vec!["cls_head.fc.bias".into()];
        let r = check_with(&case, |g| g["cls_head.fc.bias"].data_mut()[0] *= 1.001).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst.unwrap().index, 0);
    }

    #[test]
    fn evaluation_point_is_deterministic_and_bounded() {
        let m = Model::build(&ModelConfig::micro(), 2).unwrap();
        let (p1, x1) = evaluation_point(&m.graph, &m.params.cast(), 3).unwrap();
        let (p2, x2) = evaluation_point(&m.graph, &m.params.cast(), 3).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(p1, p2);
        assert!(x1.data().iter().all(|v| v.abs() <= 1.0));
        for (name, e) in p1.iter() {
            if name.ends_with("running_var") {
                assert!(e.tensor.data().iter().all(|&v| v >= CALIBRATION_VAR_FLOOR), "{name}");
            }
        }
    }
}
