use super::config::{HeadKind, InvertedResidualSpec, ModelConfig, TransBdcConfig};
use super::graph::{Act, Graph, GraphBuilder, ModuleTag, NodeId};
use super::params::ParamStore;
use crate::error::Result;
use crate::tensor::{AttentionDims, ConvSpec};

/// Builds the layer graph described by `config` and initializes its
/// parameters from `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<(Graph, ParamStore<f32>)> {
    config.validate()?;
    let mut b = GraphBuilder::new(seed, config.bn_eps);
    let x = b.input([1, config.input_channels, config.input_h, config.input_w])?;

    let mut x = b.conv(
        "stem.conv",
        x,
        ConvSpec::dense(
            config.input_channels,
            config.stem.out_channels,
            config.stem.kernel,
            config.stem.stride,
        ),
        false,
        true,
        Act::Relu6,
    )?;
    for (j, spec) in config.stem.blocks.iter().enumerate() {
        x = inverted_residual(&mut b, &format!("stem.block{j}"), x, spec)?;
    }
    if config.tpem_stages.is_empty() {
        return b.finish(x);
    }

    b.module(ModuleTag::Tpem);
    let mut taps = Vec::new();
    for (s, stage) in config.tpem_stages.iter().enumerate() {
        for (j, spec) in stage.iter().enumerate() {
            x = inverted_residual(&mut b, &format!("tpem.stage{}.block{j}", s + 1), x, spec)?;
        }
        b.mark(format!("s{}", s + 1), x);
        taps.push(x);
    }
    let (bh, bw) = config.bottleneck_size();
    let pooled = taps
        .iter()
        .enumerate()
        .map(|(i, &t)| b.pool(format!("tpem.pool{}", i + 1), t, bh, bw))
        .collect::<Result<Vec<_>>>()?;
    let x_f = b.concat("tpem.concat", &pooled)?;
    b.mark("x_f", x_f);

    b.module(ModuleTag::TransBdc);
    let mut y = x_f;
    for blk in 0..config.trans_bdc.num_blocks {
        y = trans_bdc_block(&mut b, blk, y, &config.trans_bdc)?;
    }
    b.mark("x_f2", y);

    let out = match config.head {
        HeadKind::None => y,
        HeadKind::Cls => {
            b.module(ModuleTag::Heads);
            let p = b.pool("cls_head.pool", y, 1, 1)?;
            b.linear("cls_head.fc", p, config.num_classes, true, Act::Identity)?
        }
        HeadKind::Seg => {
            b.module(ModuleTag::Fmm);
            let widths = config.tap_channels();
            let mut fmm = Vec::new();
            let mut offset = 0;
            for (i, (&tap, &c)) in taps.iter().zip(&widths).enumerate() {
                let f = fmm_scale(&mut b, i, tap, y, offset, c, config.fmm_target_channels)?;
                b.mark(format!("fmm{i}"), f);
                fmm.push(f);
                offset += c;
            }
            b.module(ModuleTag::Heads);
            seg_head(&mut b, &fmm, config.fmm_target_channels, config.num_classes)?
        }
    };
    b.mark("logits", out);
    b.finish(out)
}

fn inverted_residual(b: &mut GraphBuilder, name: &str, x: NodeId, spec: &InvertedResidualSpec) -> Result<NodeId> {
    let cin = b.shape(x)[1];
    let hidden = cin * spec.expand_ratio;
    let mut h = x;
    if spec.expand_ratio != 1 {
        h = b.conv(
            format!("{name}.expand"),
            h,
            ConvSpec::pointwise(cin, hidden),
            false,
            true,
            Act::Relu6,
        )?;
    }
    h = b.conv(
        format!("{name}.dw"),
        h,
        ConvSpec::depthwise(hidden, spec.kernel, spec.stride),
        false,
        true,
        Act::Relu6,
    )?;
    h = b.conv(
        format!("{name}.project"),
        h,
        ConvSpec::pointwise(hidden, spec.out_channels),
        false,
        true,
        Act::Identity,
    )?;
    if spec.has_skip(cin) {
        h = b.add(format!("{name}.residual"), &[h, x])?;
    }
    Ok(h)
}

fn trans_bdc_block(b: &mut GraphBuilder, blk: usize, x: NodeId, cfg: &TransBdcConfig) -> Result<NodeId> {
    let p = format!("trans_bdc.block{blk}");
    let c = b.shape(x)[1];
    b.mark(format!("{p}.input"), x);
    let mut fused = Vec::new();

    if cfg.bdc_enabled() {
        let out = bdc_branch(b, &format!("{p}.bdc"), x, cfg)?;
        b.mark(format!("{p}.bdc"), out);
        fused.push(out);
    }
    if cfg.vit {
        let out = attention_branch(b, &format!("{p}.attn"), x, cfg)?;
        b.mark(format!("{p}.vit"), out);
        fused.push(out);
    }
    let y = match fused.len() {
        0 => x,
        1 => fused[0],
        _ => b.add(format!("{p}.fuse"), &fused)?,
    };
    b.mark(format!("{p}.fused"), y);

    let e = c * cfg.ffn_expansion;
    let h = b.conv(
        format!("{p}.ffn.expand"),
        y,
        ConvSpec::pointwise(c, e),
        false,
        true,
        Act::Relu6,
    )?;
    let h = b.conv(
        format!("{p}.ffn.dw"),
        h,
        ConvSpec::depthwise(e, 3, 1),
        false,
        true,
        Act::Relu6,
    )?;
    let h = b.conv(
        format!("{p}.ffn.project"),
        h,
        ConvSpec::pointwise(e, c),
        false,
        true,
        Act::Identity,
    )?;
    let out = b.add(format!("{p}.ffn.residual"), &[h, y])?;
    b.mark(format!("{p}.output"), out);
    Ok(out)
}

/// Three depthwise branches plus identity, then the channel gate.
fn bdc_branch(b: &mut GraphBuilder, p: &str, x: NodeId, cfg: &TransBdcConfig) -> Result<NodeId> {
    let c = b.shape(x)[1];
    let mut terms = Vec::new();
    if cfg.dw3x3 {
        terms.push(b.conv(
            format!("{p}.dw3x3"),
            x,
            ConvSpec::depthwise(c, 3, 1),
            false,
            true,
            Act::Identity,
        )?);
    }
    if cfg.dw1x1 {
        terms.push(b.conv(
            format!("{p}.dw1x1"),
            x,
            ConvSpec::depthwise(c, 1, 1),
            false,
            true,
            Act::Identity,
        )?);
    }
    if cfg.dwsep {
        let d = b.conv(
            format!("{p}.dwsep.dw"),
            x,
            ConvSpec::depthwise(c, 3, 1),
            false,
            true,
            Act::Identity,
        )?;
        terms.push(b.conv(
            format!("{p}.dwsep.pw"),
            d,
            ConvSpec::pointwise(c, c),
            false,
            true,
            Act::Identity,
        )?);
    }
    let delta = if terms.is_empty() {
        x
    } else {
        terms.push(x);
        b.add(format!("{p}.sum"), &terms)?
    };
    if !cfg.channel_attention {
        return Ok(delta);
    }
    let g = b.pool(format!("{p}.ca.pool"), delta, 1, 1)?;
    let g = b.linear(format!("{p}.ca.fc1"), g, c / cfg.ca_reduction, true, Act::Relu6)?;
    let g = b.linear(format!("{p}.ca.fc2"), g, c, true, Act::Sigmoid)?;
    b.channel_scale(format!("{p}.ca.scale"), delta, g)
}

fn attention_branch(b: &mut GraphBuilder, p: &str, x: NodeId, cfg: &TransBdcConfig) -> Result<NodeId> {
    let c = b.shape(x)[1];
    let dims = AttentionDims {
        heads: cfg.num_heads,
        key_dim: cfg.k_dim,
        value_dim: cfg.v_dim,
    };
    let pw = |cout| ConvSpec::pointwise(c, cout);
    let q = b.conv(
        format!("{p}.q"),
        x,
        pw(cfg.num_heads * cfg.q_dim),
        false,
        true,
        Act::Identity,
    )?;
    let k = b.conv(
        format!("{p}.k"),
        x,
        pw(cfg.num_heads * cfg.k_dim),
        false,
        true,
        Act::Identity,
    )?;
    let v = b.conv(
        format!("{p}.v"),
        x,
        pw(cfg.num_heads * cfg.v_dim),
        false,
        true,
        Act::Identity,
    )?;
    let a = b.attention(format!("{p}.mix"), q, k, v, dims)?;
    let a = b.activation(format!("{p}.act"), a, Act::Relu6);
    let proj = ConvSpec::pointwise(cfg.num_heads * cfg.v_dim, c);
    let a = b.conv(format!("{p}.proj"), a, proj, false, true, Act::Identity)?;
    b.add(format!("{p}.residual"), &[a, x])
}

/// Gated merge of pyramid tap `i` with its slice of the bottleneck output.
///
/// The 1×1 convolutions of the global path run at bottleneck resolution and
/// are upsampled afterwards; both orders give the same values because a 1×1
/// convolution followed by BN is a per-pixel affine map and bilinear weights
/// sum to one.
fn fmm_scale(
    b: &mut GraphBuilder,
    i: usize,
    tap: NodeId,
    global: NodeId,
    offset: usize,
    width: usize,
    t: usize,
) -> Result<NodeId> {
    let p = format!("fmm.scale{i}");
    let [_, _, h, w] = b.shape(tap);
    let local = b.pool(format!("{p}.pool"), tap, h / 2, w / 2)?;
    let local = b.conv(
        format!("{p}.local"),
        local,
        ConvSpec::pointwise(width, t),
        false,
        true,
        Act::Identity,
    )?;
    let g = b.slice(format!("{p}.slice"), global, offset, width)?;
    let gate = b.conv(
        format!("{p}.gate"),
        g,
        ConvSpec::pointwise(width, t),
        false,
        true,
        Act::Identity,
    )?;
    let gate = b.upsample_like(format!("{p}.gate_up"), gate, local)?;
    let gate = b.activation(format!("{p}.gate_sigmoid"), gate, Act::Sigmoid);
    let add = b.conv(
        format!("{p}.add"),
        g,
        ConvSpec::pointwise(width, t),
        false,
        true,
        Act::Identity,
    )?;
    let add = b.upsample_like(format!("{p}.add_up"), add, local)?;
    let m = b.mul(format!("{p}.mul"), local, gate)?;
    b.add(format!("{p}.out"), &[m, add])
}

/// Coarse-to-fine upsample-and-sum, then two 1×1 convolutions.
fn seg_head(b: &mut GraphBuilder, fmm: &[NodeId], t: usize, classes: usize) -> Result<NodeId> {
    let mut y = *fmm.last().expect("at least one scale");
    for i in (0..fmm.len() - 1).rev() {
        let up = b.upsample_like(format!("seg_head.up{i}"), y, fmm[i])?;
        y = b.add(format!("seg_head.sum{i}"), &[up, fmm[i]])?;
    }
    let y = b.conv("seg_head.fuse", y, ConvSpec::pointwise(t, t), true, true, Act::Relu6)?;
    b.conv(
        "seg_head.classifier",
        y,
        ConvSpec::pointwise(t, classes),
        true,
        false,
        Act::Identity,
    )
}
