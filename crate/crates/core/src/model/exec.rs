//! Graph execution.
//!
//! [`evaluate`] runs the smallest set of nodes that produces the requested
//! targets from the given seed values and frees every intermediate after its
//! last use. [`trace`] keeps everything for [`backward`], which walks the
//! graph in reverse using the per-operator backward kernels.

use indexmap::IndexMap;

use super::graph::{Act, Graph, NodeId, Op};
use super::params::ParamStore;
use crate::error::{config_err, Result};
use crate::tensor::activation::{relu6_backward, sigmoid_backward};
use crate::tensor::attention::attention_backward;
use crate::tensor::conv::{add_channel_bias, channel_sum, conv2d, conv2d_backward};
use crate::tensor::linalg::{channel_scale, channel_scale_backward, linear, linear_backward};
use crate::tensor::norm::{batchnorm_backward, batchnorm_infer};
use crate::tensor::pool::{adaptive_avg_pool, adaptive_avg_pool_backward};
use crate::tensor::resize::{upsample_bilinear, upsample_bilinear_backward};
use crate::tensor::{add, attention, concat_channels, hadamard, relu6, sigmoid, slice_channels, Real, Tensor};

/// `piece`, when given, is this node's output at a reference point: each
/// relu6 element then keeps the linear piece it had there.
fn apply_act<T: Real>(x: Tensor<T>, act: Act, piece: Option<&Tensor<T>>) -> Tensor<T> {
    match (act, piece) {
        (Act::Identity, _) => x,
        (Act::Relu6, None) => relu6(&x),
        (Act::Relu6, Some(base)) => {
            let six = T::of(6.0);
            let data = x
                .data()
                .iter()
                .zip(base.data())
                .map(|(&v, &b)| {
                    if b <= T::zero() {
                        T::zero()
                    } else if b >= six {
                        six
                    } else {
                        v
                    }
                })
                .collect();
            Tensor::new(x.shape(), data).expect("same shape")
        }
        (Act::Sigmoid, _) => sigmoid(&x),
    }
}

/// Gradient through an activation given its output. For relu6 the output
/// lies strictly inside `(0, 6)` exactly when the input does.
fn act_backward<T: Real>(g: Tensor<T>, out: &Tensor<T>, act: Act) -> Result<Tensor<T>> {
    match act {
        Act::Identity => Ok(g),
        Act::Relu6 => relu6_backward(&g, out),
        Act::Sigmoid => sigmoid_backward(&g, out),
    }
}

fn param<'a, T: Real>(params: &'a ParamStore<T>, node: &str, suffix: &str) -> Result<&'a Tensor<T>> {
    params.tensor(&format!("{node}.{suffix}"))
}

/// Output of one node plus, for convolutions with BN, the pre-BN value.
fn run_node<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    id: NodeId,
    inputs: &[&Tensor<T>],
    piece: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let node = graph.node(id);
    let name = node.name.as_str();
    let out = match &node.op {
        Op::Input => return config_err("input node has no computation"),
        Op::Conv { spec, bias, bn, act } => {
            let mut z = conv2d(inputs[0], param(params, name, "weight")?, spec)?;
            if *bias {
                add_channel_bias(&mut z, param(params, name, "bias")?.data())?;
            }
            if *bn {
                let bnp = params.batchnorm(&format!("{name}.bn"), graph.bn_eps())?;
                let y = batchnorm_infer(&z, &bnp)?;
                return Ok((apply_act(y, *act, piece), Some(z)));
            }
            apply_act(z, *act, piece)
        }
        Op::Linear { bias, act, .. } => {
            let b = if *bias {
                Some(param(params, name, "bias")?.data())
            } else {
                None
            };
            apply_act(linear(inputs[0], param(params, name, "weight")?, b)?, *act, piece)
        }
        Op::Add => {
            let mut acc = inputs[0].clone();
            for x in &inputs[1..] {
                acc = add(&acc, x)?;
            }
            acc
        }
        Op::Mul => hadamard(inputs[0], inputs[1])?,
        Op::ChannelScale => channel_scale(inputs[0], inputs[1])?,
        Op::Activation(act) => apply_act(inputs[0].clone(), *act, piece),
        Op::Pool { out_h, out_w } => adaptive_avg_pool(inputs[0], *out_h, *out_w)?,
        Op::UpsampleLike => upsample_bilinear(inputs[0], inputs[1].h(), inputs[1].w())?,
        Op::Concat => concat_channels(inputs)?,
        Op::Slice { start, len } => slice_channels(inputs[0], *start, *len)?,
        Op::Attention(dims) => attention(inputs[0], inputs[1], inputs[2], *dims)?,
    };
    Ok((out, None))
}

fn needed(graph: &Graph, seeds: &[NodeId], targets: &[NodeId]) -> Vec<bool> {
    let mut need = vec![false; graph.nodes().len()];
    let mut stack: Vec<NodeId> = targets.to_vec();
    while let Some(id) = stack.pop() {
        if need[id] {
            continue;
        }
        need[id] = true;
        if !seeds.contains(&id) {
            stack.extend(&graph.node(id).inputs);
        }
    }
    need
}

/// Computes `targets` from `seeds`, touching only the nodes in between.
///
/// Seeds replace the values of their nodes, so a sub-block can be run on an
/// arbitrary tensor by seeding the node that feeds it.
pub fn evaluate<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    seeds: &[(NodeId, Tensor<T>)],
    targets: &[NodeId],
) -> Result<Vec<Tensor<T>>> {
    run_region(graph, params, seeds, targets, None)
}

/// [`evaluate`] with every relu6 held on the linear piece it had in `base`.
/// Near `base` the result is smooth in the parameters and has the same
/// gradient, so finite differences taken on it never straddle a corner.
pub fn evaluate_frozen<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    seeds: &[(NodeId, Tensor<T>)],
    targets: &[NodeId],
    base: &Trace<T>,
) -> Result<Vec<Tensor<T>>> {
    run_region(graph, params, seeds, targets, Some(base))
}

fn run_region<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    seeds: &[(NodeId, Tensor<T>)],
    targets: &[NodeId],
    base: Option<&Trace<T>>,
) -> Result<Vec<Tensor<T>>> {
    let seed_ids: Vec<NodeId> = seeds.iter().map(|(id, _)| *id).collect();
    let need = needed(graph, &seed_ids, targets);
    let n = graph.nodes().len();
    let mut last_use = vec![0usize; n];
    for (id, node) in graph.nodes().iter().enumerate() {
        if need[id] && !seed_ids.contains(&id) {
            for &i in &node.inputs {
                last_use[i] = last_use[i].max(id);
            }
        }
    }
    for &t in targets {
        last_use[t] = usize::MAX;
    }
    let mut values: Vec<Option<Tensor<T>>> = vec![None; n];
    for (id, t) in seeds {
        values[*id] = Some(t.clone());
    }
    for id in 0..n {
        if !need[id] || values[id].is_some() {
            continue;
        }
        let node = graph.node(id);
        if node.op == Op::Input {
            return config_err(format!("no value supplied for {}", node.name));
        }
        let out = {
            let inputs: Vec<&Tensor<T>> = node
                .inputs
                .iter()
                .map(|&i| values[i].as_ref().expect("inputs precede their consumers"))
                .collect();
            run_node(graph, params, id, &inputs, base.map(|b| &b.values[id]))?.0
        };
        out.check_finite(&node.name)?;
        values[id] = Some(out);
        for &i in &node.inputs {
            if last_use[i] == id {
                values[i] = None;
            }
        }
    }
    Ok(targets
        .iter()
        .map(|&t| values[t].clone().expect("targets are kept"))
        .collect())
}

/// Runs the whole graph on `input` and returns its output.
pub fn forward<T: Real>(graph: &Graph, params: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    check_input(graph, input)?;
    let mut out = evaluate(graph, params, &[(graph.input(), input.clone())], &[graph.output()])?;
    Ok(out.pop().expect("one target"))
}

fn check_input<T: Real>(graph: &Graph, input: &Tensor<T>) -> Result<()> {
    let expect = graph.input_shape();
    if input.shape()[1..] != expect[1..] {
        return config_err(format!(
            "input shape {:?} does not match the model input [N, {}, {}, {}]",
            input.shape(),
            expect[1],
            expect[2],
            expect[3]
        ));
    }
    Ok(())
}

/// Replaces every BN layer's running statistics with the per-channel mean
/// and variance of its input over `batch` (all of N, H and W), front to back
/// so each layer sees already-calibrated inputs. Scales and shifts are kept.
/// This gives randomly initialized weights the activation scale of a trained
/// network, where frozen statistics match the data.
pub fn calibrate_batchnorm<T: Real>(
    graph: &Graph,
    params: &mut ParamStore<T>,
    batch: &Tensor<T>,
    var_floor: f64,
) -> Result<()> {
    check_input(graph, batch)?;
    let n = graph.nodes().len();
    let mut values: Vec<Tensor<T>> = Vec::with_capacity(n);
    values.push(batch.clone());
    for id in 1..n {
        let node = graph.node(id);
        let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &values[i]).collect();
        let (mut out, z) = run_node(graph, params, id, &inputs, None)?;
        if let Some(z) = z {
            let count = T::of((z.n() * z.h() * z.w()) as f64);
            let (mut mean, mut var) = (Vec::with_capacity(z.c()), Vec::with_capacity(z.c()));
            for c in 0..z.c() {
                let vals = || (0..z.n()).flat_map(|b| z.plane(b, c).iter().copied());
                let m = vals().fold(T::zero(), |a, v| a + v) / count;
                let v = vals().fold(T::zero(), |a, x| a + (x - m) * (x - m)) / count;
                mean.push(m);
                var.push(v.max(T::of(var_floor)));
            }
            let set = |p: &mut ParamStore<T>, suffix: &str, data: &[T]| -> Result<()> {
                let key = format!("{}.bn.{suffix}", node.name);
                match p.get_mut(&key) {
                    Some(e) => {
                        e.tensor.data_mut().copy_from_slice(data);
                        Ok(())
                    }
                    None => config_err(format!("missing parameter {key}")),
                }
            };
            set(params, "running_mean", &mean)?;
            set(params, "running_var", &var)?;
            out = run_node(graph, params, id, &inputs, None)?.0;
        }
        out.check_finite(&node.name)?;
        values.push(out);
    }
    Ok(())
}

/// Every intermediate value of one forward pass.
pub struct Trace<T> {
    values: Vec<Tensor<T>>,
    pre_bn: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Trace<T> {
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.values[id]
    }

    pub fn output(&self) -> &Tensor<T> {
        self.values.last().expect("non-empty trace")
    }
}

pub fn trace<T: Real>(graph: &Graph, params: &ParamStore<T>, input: &Tensor<T>) -> Result<Trace<T>> {
    check_input(graph, input)?;
    let n = graph.nodes().len();
    let mut values: Vec<Tensor<T>> = Vec::with_capacity(n);
    let mut pre_bn = Vec::with_capacity(n);
    values.push(input.clone());
    pre_bn.push(None);
    for id in 1..n {
        let node = graph.node(id);
        let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &values[i]).collect();
        let (out, z) = run_node(graph, params, id, &inputs, None)?;
        out.check_finite(&node.name)?;
        values.push(out);
        pre_bn.push(z);
    }
    // nodes after the designated output do not contribute
    values.truncate(graph.output() + 1);
    pre_bn.truncate(graph.output() + 1);
    Ok(Trace { values, pre_bn })
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    *slot = Some(match slot.take() {
        None => g,
        Some(acc) => add(&acc, &g)?,
    });
    Ok(())
}

fn as_tensor<T: Real>(v: Vec<T>) -> Tensor<T> {
    let n = v.len();
    Tensor::new([n, 1, 1, 1], v).expect("length matches")
}

/// Gradients of `Σ grad_output ⊙ output` with respect to every trainable
/// parameter, in parameter-store order. Parameters the output does not
/// depend on get zeros.
pub fn backward<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    trace: &Trace<T>,
    grad_output: &Tensor<T>,
) -> Result<IndexMap<String, Tensor<T>>> {
    let out_id = graph.output();
    if grad_output.shape() != trace.values[out_id].shape() {
        return config_err("backward: gradient does not match the output shape");
    }
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; out_id + 1];
    grads[out_id] = Some(grad_output.clone());
    let mut pgrads: IndexMap<String, Tensor<T>> = IndexMap::new();

    for id in (1..=out_id).rev() {
        let Some(g) = grads[id].take() else { continue };
        let node = graph.node(id);
        let name = node.name.as_str();
        let x = |k: usize| &trace.values[node.inputs[k]];
        let out = &trace.values[id];
        let push =
            |grads: &mut Vec<Option<Tensor<T>>>, k: usize, gx: Tensor<T>| accumulate(&mut grads[node.inputs[k]], gx);
        match &node.op {
            Op::Input => {}
            Op::Conv { spec, bias, bn, act } => {
                let mut gz = act_backward(g, out, *act)?;
                if *bn {
                    let bnp = params.batchnorm(&format!("{name}.bn"), graph.bn_eps())?;
                    let z = trace.pre_bn[id].as_ref().expect("pre-BN value traced");
                    let bg = batchnorm_backward(&gz, z, &bnp)?;
                    pgrads.insert(format!("{name}.bn.weight"), as_tensor(bg.gamma));
                    pgrads.insert(format!("{name}.bn.bias"), as_tensor(bg.beta));
                    gz = bg.input;
                }
                if *bias {
                    pgrads.insert(format!("{name}.bias"), as_tensor(channel_sum(&gz)));
                }
                let (gx, gw) = conv2d_backward(&gz, x(0), param(params, name, "weight")?, spec)?;
                pgrads.insert(format!("{name}.weight"), gw);
                push(&mut grads, 0, gx)?;
            }
            Op::Linear { bias, act, .. } => {
                let gz = act_backward(g, out, *act)?;
                let (gx, gw, gb) = linear_backward(&gz, x(0), param(params, name, "weight")?)?;
                pgrads.insert(format!("{name}.weight"), gw);
                if *bias {
                    pgrads.insert(format!("{name}.bias"), as_tensor(gb));
                }
                push(&mut grads, 0, gx)?;
            }
            Op::Add => {
                for k in 0..node.inputs.len() {
                    push(&mut grads, k, g.clone())?;
                }
            }
            Op::Mul => {
                push(&mut grads, 0, hadamard(&g, x(1))?)?;
                push(&mut grads, 1, hadamard(&g, x(0))?)?;
            }
            Op::ChannelScale => {
                let (gx, gg) = channel_scale_backward(&g, x(0), x(1))?;
                push(&mut grads, 0, gx)?;
                push(&mut grads, 1, gg)?;
            }
            Op::Activation(act) => push(&mut grads, 0, act_backward(g, out, *act)?)?,
            Op::Pool { .. } => push(&mut grads, 0, adaptive_avg_pool_backward(&g, x(0).shape())?)?,
            Op::UpsampleLike => push(&mut grads, 0, upsample_bilinear_backward(&g, x(0).shape())?)?,
            Op::Concat => {
                let mut start = 0;
                for k in 0..node.inputs.len() {
                    let c = x(k).c();
                    push(&mut grads, k, slice_channels(&g, start, c)?)?;
                    start += c;
                }
            }
            Op::Slice { start, len } => {
                let src = x(0);
                let hw = src.h() * src.w();
                let mut gx = Tensor::zeros(src.shape());
                for n in 0..src.n() {
                    let dst = (n * src.c() + start) * hw;
                    let from = n * len * hw;
                    gx.data_mut()[dst..dst + len * hw].copy_from_slice(&g.data()[from..from + len * hw]);
                }
                push(&mut grads, 0, gx)?;
            }
            Op::Attention(dims) => {
                let ag = attention_backward(&g, x(0), x(1), x(2), *dims)?;
                push(&mut grads, 0, ag.q)?;
                push(&mut grads, 1, ag.k)?;
                push(&mut grads, 2, ag.v)?;
            }
        }
    }

    let mut ordered = IndexMap::new();
    for (name, e) in params.iter() {
        if e.trainable {
            let g = pgrads
                .swap_remove(name)
                .unwrap_or_else(|| Tensor::zeros(e.tensor.shape()));
            ordered.insert(name.to_string(), g);
        }
    }
    Ok(ordered)
}
