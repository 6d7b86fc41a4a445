use std::fmt;

use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{seeded_rng, Init, ParamStore};
use crate::error::{config_err, Result};
use crate::tensor::{AttentionDims, ConvKind, ConvSpec, Shape};

pub type NodeId = usize;

/// Top-level grouping used for cost rollups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleTag {
    Stem,
    Tpem,
    TransBdc,
    Fmm,
    Heads,
}

impl ModuleTag {
    pub const ALL: [ModuleTag; 5] = [
        ModuleTag::Stem,
        ModuleTag::Tpem,
        ModuleTag::TransBdc,
        ModuleTag::Fmm,
        ModuleTag::Heads,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleTag::Stem => "stem",
            ModuleTag::Tpem => "tpem",
            ModuleTag::TransBdc => "trans_bdc",
            ModuleTag::Fmm => "fmm",
            ModuleTag::Heads => "heads",
        }
    }
}

impl fmt::Display for ModuleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Identity,
    Relu6,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    /// Convolution, optional bias, optional frozen BN, activation.
    Conv {
        spec: ConvSpec,
        bias: bool,
        bn: bool,
        act: Act,
    },
    /// Fully connected layer on `[N, C, 1, 1]` values.
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
        act: Act,
    },
    /// Sum of all inputs.
    Add,
    /// Elementwise product of two inputs.
    Mul,
    /// `inputs[0] · inputs[1]` with the second broadcast over H and W.
    ChannelScale,
    Activation(Act),
    /// Adaptive average pool to a fixed grid.
    Pool {
        out_h: usize,
        out_w: usize,
    },
    /// Bilinear upsample of `inputs[0]` to the spatial size of `inputs[1]`.
    UpsampleLike,
    Concat,
    Slice {
        start: usize,
        len: usize,
    },
    /// Inputs are `q`, `k`, `v`.
    Attention(AttentionDims),
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv { spec, .. } => match spec.kind {
                ConvKind::Pointwise => "conv_pw",
                ConvKind::Depthwise => "conv_dw",
                ConvKind::Dense => "conv",
            },
            Op::Linear { .. } => "linear",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::ChannelScale => "channel_scale",
            Op::Activation(Act::Relu6) => "relu6",
            Op::Activation(Act::Sigmoid) => "sigmoid",
            Op::Activation(Act::Identity) => "identity",
            Op::Pool { .. } => "avg_pool",
            Op::UpsampleLike => "upsample",
            Op::Concat => "concat",
            Op::Slice { .. } => "slice",
            Op::Attention(_) => "attention",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub module: ModuleTag,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Output shape at the graph's nominal input size.
    pub shape: Shape,
    /// Names of the parameters and buffers owned by this node.
    pub params: Vec<String>,
}

/// Static layer graph in topological order.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
    marks: IndexMap<String, NodeId>,
    output: NodeId,
    bn_eps: f64,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn input_shape(&self) -> Shape {
        self.nodes[0].shape
    }

    pub fn bn_eps(&self) -> f64 {
        self.bn_eps
    }

    /// Named intermediate values (`"x_f"`, `"s1"`, `"fmm0"`, ...).
    pub fn marks(&self) -> &IndexMap<String, NodeId> {
        &self.marks
    }

    pub fn mark(&self, name: &str) -> Result<NodeId> {
        match self.marks.get(name) {
            Some(&id) => Ok(id),
            None => config_err(format!("graph has no value named {name:?}")),
        }
    }

    pub fn find(&self, name: &str) -> Result<NodeId> {
        match self.nodes.iter().position(|n| n.name == name) {
            Some(id) => Ok(id),
            None => config_err(format!("graph has no node named {name:?}")),
        }
    }
}

/// Incremental graph construction with parameter declaration and seeded
/// initialization.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    marks: IndexMap<String, NodeId>,
    params: ParamStore<f32>,
    rng: ChaCha8Rng,
    bn_eps: f64,
    module: ModuleTag,
}

impl GraphBuilder {
    pub fn new(seed: u64, bn_eps: f64) -> Self {
        Self {
            nodes: Vec::new(),
            marks: IndexMap::new(),
            params: ParamStore::new(),
            rng: seeded_rng(seed),
            bn_eps,
            module: ModuleTag::Stem,
        }
    }

    /// Module tag given to nodes pushed from now on.
    pub fn module(&mut self, m: ModuleTag) -> &mut Self {
        self.module = m;
        self
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id].shape
    }

    pub fn mark(&mut self, name: impl Into<String>, id: NodeId) {
        self.marks.insert(name.into(), id);
    }

    fn push(&mut self, name: String, op: Op, inputs: Vec<NodeId>, shape: Shape, params: Vec<String>) -> NodeId {
        self.nodes.push(Node {
            name,
            module: self.module,
            op,
            inputs,
            shape,
            params,
        });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, shape: Shape) -> Result<NodeId> {
        if !self.nodes.is_empty() {
            return config_err("the input node must come first");
        }
        Ok(self.push("input".into(), Op::Input, vec![], shape, vec![]))
    }

    fn declare(&mut self, name: String, dims: Vec<usize>, init: Init, trainable: bool) -> Result<String> {
        self.params
            .declare(&mut self.rng, name.clone(), dims, init, trainable)?;
        Ok(name)
    }

    fn bn_params(&mut self, prefix: &str, c: usize) -> Result<Vec<String>> {
        Ok(vec![
            self.declare(format!("{prefix}.bn.weight"), vec![c], Init::Const(1.0), true)?,
            self.declare(format!("{prefix}.bn.bias"), vec![c], Init::Const(0.0), true)?,
            self.declare(format!("{prefix}.bn.running_mean"), vec![c], Init::Const(0.0), false)?,
            self.declare(format!("{prefix}.bn.running_var"), vec![c], Init::Const(1.0), false)?,
        ])
    }

    pub fn conv(
        &mut self,
        name: impl Into<String>,
        x: NodeId,
        spec: ConvSpec,
        bias: bool,
        bn: bool,
        act: Act,
    ) -> Result<NodeId> {
        let name = name.into();
        spec.validate()?;
        let in_shape = self.shape(x);
        if in_shape[1] != spec.in_channels {
            return config_err(format!(
                "{name}: expects {} input channels, got {:?}",
                spec.in_channels, in_shape
            ));
        }
        let shape = spec.output_shape(in_shape)?;
        let fan_in = spec.in_per_group() * spec.kernel.0 * spec.kernel.1;
        let mut params = vec![self.declare(
            format!("{name}.weight"),
            spec.weight_shape().to_vec(),
            Init::KaimingUniform { fan_in },
            true,
        )?];
        if bias {
            params.push(self.declare(
                format!("{name}.bias"),
                vec![spec.out_channels],
                Init::Bias { fan_in },
                true,
            )?);
        }
        if bn {
            params.extend(self.bn_params(&name, spec.out_channels)?);
        }
        Ok(self.push(name, Op::Conv { spec, bias, bn, act }, vec![x], shape, params))
    }

    pub fn linear(
        &mut self,
        name: impl Into<String>,
        x: NodeId,
        out_features: usize,
        bias: bool,
        act: Act,
    ) -> Result<NodeId> {
        let name = name.into();
        let [n, c, h, w] = self.shape(x);
        if h != 1 || w != 1 || out_features == 0 {
            return config_err(format!("{name}: linear needs [N, C, 1, 1] input"));
        }
        let mut params = vec![self.declare(
            format!("{name}.weight"),
            vec![out_features, c, 1, 1],
            Init::KaimingUniform { fan_in: c },
            true,
        )?];
        if bias {
            params.push(self.declare(
                format!("{name}.bias"),
                vec![out_features],
                Init::Bias { fan_in: c },
                true,
            )?);
        }
        let op = Op::Linear {
            in_features: c,
            out_features,
            bias,
            act,
        };
        Ok(self.push(name, op, vec![x], [n, out_features, 1, 1], params))
    }

    pub fn add(&mut self, name: impl Into<String>, inputs: &[NodeId]) -> Result<NodeId> {
        let name = name.into();
        let shape = self.same_shapes(&name, inputs)?;
        Ok(self.push(name, Op::Add, inputs.to_vec(), shape, vec![]))
    }

    pub fn mul(&mut self, name: impl Into<String>, a: NodeId, b: NodeId) -> Result<NodeId> {
        let name = name.into();
        let shape = self.same_shapes(&name, &[a, b])?;
        Ok(self.push(name, Op::Mul, vec![a, b], shape, vec![]))
    }

    fn same_shapes(&self, name: &str, inputs: &[NodeId]) -> Result<Shape> {
        let Some(&first) = inputs.first() else {
            return config_err(format!("{name}: no inputs"));
        };
        let shape = self.shape(first);
        if inputs.iter().any(|&i| self.shape(i) != shape) {
            let shapes: Vec<Shape> = inputs.iter().map(|&i| self.shape(i)).collect();
            return config_err(format!("{name}: shape mismatch {shapes:?}"));
        }
        Ok(shape)
    }

    pub fn channel_scale(&mut self, name: impl Into<String>, x: NodeId, gate: NodeId) -> Result<NodeId> {
        let name = name.into();
        let [n, c, _, _] = self.shape(x);
        if self.shape(gate) != [n, c, 1, 1] {
            return config_err(format!("{name}: gate does not match channels"));
        }
        let shape = self.shape(x);
        Ok(self.push(name, Op::ChannelScale, vec![x, gate], shape, vec![]))
    }

    pub fn activation(&mut self, name: impl Into<String>, x: NodeId, act: Act) -> NodeId {
        let shape = self.shape(x);
        self.push(name.into(), Op::Activation(act), vec![x], shape, vec![])
    }

    pub fn pool(&mut self, name: impl Into<String>, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let name = name.into();
        let [n, c, h, w] = self.shape(x);
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return config_err(format!("{name}: cannot pool {h}x{w} to {out_h}x{out_w}"));
        }
        Ok(self.push(name, Op::Pool { out_h, out_w }, vec![x], [n, c, out_h, out_w], vec![]))
    }

    pub fn upsample_like(&mut self, name: impl Into<String>, x: NodeId, like: NodeId) -> Result<NodeId> {
        let name = name.into();
        let [n, c, h, w] = self.shape(x);
        let [_, _, th, tw] = self.shape(like);
        if th < h || tw < w {
            return config_err(format!("{name}: cannot upsample {h}x{w} to {th}x{tw}"));
        }
        Ok(self.push(name, Op::UpsampleLike, vec![x, like], [n, c, th, tw], vec![]))
    }

    pub fn concat(&mut self, name: impl Into<String>, inputs: &[NodeId]) -> Result<NodeId> {
        let name = name.into();
        let Some(&first) = inputs.first() else {
            return config_err(format!("{name}: no inputs"));
        };
        let [n, _, h, w] = self.shape(first);
        let mut c = 0;
        for &i in inputs {
            let s = self.shape(i);
            if s[0] != n || s[2] != h || s[3] != w {
                return config_err(format!("{name}: incompatible part {s:?}"));
            }
            c += s[1];
        }
        Ok(self.push(name, Op::Concat, inputs.to_vec(), [n, c, h, w], vec![]))
    }

    pub fn slice(&mut self, name: impl Into<String>, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let name = name.into();
        let [n, c, h, w] = self.shape(x);
        if len == 0 || start + len > c {
            return config_err(format!("{name}: channels {start}..{} out of {c}", start + len));
        }
        Ok(self.push(name, Op::Slice { start, len }, vec![x], [n, len, h, w], vec![]))
    }

    pub fn attention(
        &mut self,
        name: impl Into<String>,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        dims: AttentionDims,
    ) -> Result<NodeId> {
        let name = name.into();
        let [n, _, h, w] = self.shape(q);
        let qk = [n, dims.heads * dims.key_dim, h, w];
        if self.shape(q) != qk || self.shape(k) != qk || self.shape(v) != [n, dims.heads * dims.value_dim, h, w] {
            return config_err(format!("{name}: q/k/v shapes do not match {dims:?}"));
        }
        if h * w == 0 {
            return config_err(format!("{name}: zero tokens"));
        }
        let shape = self.shape(v);
        Ok(self.push(name, Op::Attention(dims), vec![q, k, v], shape, vec![]))
    }

    pub fn finish(self, output: NodeId) -> Result<(Graph, ParamStore<f32>)> {
        if self.nodes.is_empty() || self.nodes[0].op != Op::Input {
            return config_err("graph needs an input node");
        }
        if output >= self.nodes.len() {
            return config_err("output node out of range");
        }
        Ok((
            Graph {
                nodes: self.nodes,
                marks: self.marks,
                output,
                bn_eps: self.bn_eps,
            },
            self.params,
        ))
    }
}
