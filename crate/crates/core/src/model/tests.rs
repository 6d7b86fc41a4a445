use super::*;
use crate::error::Error;
use crate::gme::build_gme_stack;
use crate::tensor::testutil::random;
use crate::tensor::{Real, Tensor};

fn zero_weights<T: Real>(p: &mut ParamStore<T>, prefix: &str) {
    assert!(p.zero_weights(prefix) > 0, "no weights under {prefix}");
}

fn randomize_bn(p: &mut ParamStore<f64>, seed: u64) {
    p.randomize_batchnorm(seed);
}

fn head_none(mut c: ModelConfig) -> ModelConfig {
    c.head = HeadKind::None;
    c
}

fn micro_at(h: usize, w: usize) -> ModelConfig {
    head_none(ModelConfig::micro()).with_resolution(h, w).unwrap()
}

#[test]
fn seg_config_shapes_at_512() {
    let m = Model::build(&ModelConfig::seg(), 0).unwrap();
    let g = &m.graph;
    let shape = |mark: &str| g.node(g.mark(mark).unwrap()).shape;
    assert_eq!(shape("s1"), [1, 16, 128, 128]);
    assert_eq!(shape("s2"), [1, 32, 64, 64]);
    assert_eq!(shape("s3"), [1, 64, 32, 32]);
    assert_eq!(shape("s4"), [1, 96, 16, 16]);
    assert_eq!(shape("x_f"), [1, 208, 8, 8]);
    assert_eq!(shape("x_f2"), [1, 208, 8, 8]);
    for (i, side) in [64, 32, 16, 8].into_iter().enumerate() {
        assert_eq!(shape(&format!("fmm{i}")), [1, 160, side, side]);
    }
    assert_eq!(shape("logits"), [1, 150, 64, 64]);

    let x = random::<f32>([1, 5, 512, 512], 1);
    assert_eq!(m.forward(&x).unwrap().shape(), [1, 150, 64, 64]);
}

#[test]
fn bottleneck_at_448_is_7x7() {
    let m = Model::build(&ModelConfig::seg_448(), 0).unwrap();
    assert_eq!(m.graph.node(m.graph.mark("x_f").unwrap()).shape, [1, 208, 7, 7]);
}

#[test]
fn shape_schedule_over_grid() {
    for k in 1..=8 {
        for m in 1..=8 {
            let cfg = ModelConfig::seg().with_resolution(64 * k, 64 * m).unwrap();
            let (g, _) = build_model(&cfg, 0).unwrap();
            let shape = |mark: &str| g.node(g.mark(mark).unwrap()).shape;
            for (i, (div, c)) in [(4, 16), (8, 32), (16, 64), (32, 96)].into_iter().enumerate() {
                assert_eq!(shape(&format!("s{}", i + 1)), [1, c, 64 * k / div, 64 * m / div]);
                assert_eq!(shape(&format!("fmm{i}")), [1, 160, 32 * k / div, 32 * m / div]);
            }
            assert_eq!(shape("x_f"), [1, 208, k, m]);
            assert_eq!(shape("x_f2"), [1, 208, k, m]);
        }
    }
}

#[test]
fn tpem_runtime_shapes_match_graph() {
    let cfg = micro_at(64, 128);
    let m = Model::build(&cfg, 0).unwrap();
    let x = random::<f32>([1, 5, 64, 128], 2);
    let pyr = tpem_forward(&m.graph, &m.params, &x).unwrap();
    let sides: Vec<_> = pyr.scales.iter().map(|s| s.shape()).collect();
    assert_eq!(
        sides,
        vec![[1, 16, 16, 32], [1, 32, 8, 16], [1, 64, 4, 8], [1, 96, 2, 4]]
    );
    assert_eq!(pyr.x_f.shape(), [1, 208, 1, 2]);
    assert_eq!(pyr.x_f.c(), cfg.bottleneck_channels());
    assert!(tpem_forward(&m.graph, &m.params, &random::<f32>([1, 3, 64, 128], 2)).is_err());
}

#[test]
fn rejects_indivisible_input() {
    assert!(matches!(
        ModelConfig::seg().with_resolution(500, 512),
        Err(Error::Config(_))
    ));
}

#[test]
fn constant_input_with_zero_convs_gives_constant_x_f() {
    let m = Model::build(&ModelConfig::micro(), 0).unwrap();
    let mut p = m.params.clone();
    zero_weights(&mut p, "stem.");
    zero_weights(&mut p, "tpem.");
    let x = Tensor::full([1, 5, 64, 64], 0.7f32);
    let x_f = tpem_forward(&m.graph, &p, &x).unwrap().x_f;
    let first = x_f.data()[0];
    assert!(x_f.data().iter().all(|&v| v == first));
}

#[test]
fn zeroed_bdc_halves_input() {
    let m = Model::build(&micro_at(128, 128), 3).unwrap();
    let mut p = m.params.clone();
    zero_weights(&mut p, "trans_bdc.block0.bdc.");
    p.fill("trans_bdc.block0.bdc.ca.", ".bias", 0.0);
    let x = random::<f32>([1, 208, 2, 2], 4);
    let y = bdc_forward(&m.graph, &p, 0, &x).unwrap();
    assert_eq!(y, x.map(|v| 0.5 * v));
}

#[test]
fn channel_gate_never_grows_delta() {
    let m = Model::build(&micro_at(128, 128), 5).unwrap();
    let x = random::<f32>([1, 208, 2, 2], 6);
    let g = &m.graph;
    let delta = g.find("trans_bdc.block0.bdc.sum").unwrap();
    let out = evaluate(
        g,
        &m.params,
        &[(g.mark("trans_bdc.block0.input").unwrap(), x)],
        &[delta, g.mark("trans_bdc.block0.bdc").unwrap()],
    )
    .unwrap();
    for (d, y) in out[0].data().iter().zip(out[1].data()) {
        assert!(y.abs() <= d.abs());
    }
}

#[test]
fn zeroed_projection_returns_input() {
    let m = Model::build(&micro_at(128, 128), 7).unwrap();
    let mut p = m.params.clone();
    zero_weights(&mut p, "trans_bdc.block0.attn.proj");
    let x = random::<f32>([1, 208, 2, 2], 8);
    assert_eq!(attention_forward(&m.graph, &p, 0, &x).unwrap(), x);
}

#[test]
fn zeroed_keys_average_values() {
    let m = Model::build(&micro_at(128, 128), 9).unwrap();
    let mut p = m.params.clone();
    zero_weights(&mut p, "trans_bdc.block0.attn.k");
    let g = &m.graph;
    let x = random::<f32>([1, 208, 2, 2], 10);
    let v = g.find("trans_bdc.block0.attn.v").unwrap();
    let mix = g.find("trans_bdc.block0.attn.mix").unwrap();
    let out = evaluate(g, &p, &[(g.mark("trans_bdc.block0.input").unwrap(), x)], &[v, mix]).unwrap();
    let (v, mix) = (&out[0], &out[1]);
    for c in 0..v.c() {
        let mean = v.plane(0, c).iter().sum::<f32>() / 4.0;
        for &a in mix.plane(0, c) {
            assert!((a - mean).abs() < 1e-6, "channel {c}: {a} vs {mean}");
        }
    }
}

#[test]
fn fully_zeroed_block_scales_by_one_and_a_half() {
    let m = Model::build(&micro_at(128, 128), 11).unwrap();
    let mut p = m.params.clone();
    zero_weights(&mut p, "trans_bdc.block0.");
    p.fill("trans_bdc.block0.bdc.ca.", ".bias", 0.0);
    let x = random::<f32>([1, 208, 2, 2], 12);
    let y = trans_bdc_block_forward(&m.graph, &p, 0, &x).unwrap();
    assert_eq!(y, x.map(|v| 1.5 * v));
}

#[test]
fn bottleneck_preserves_shape_for_any_depth() {
    for n in 0..=3 {
        let mut cfg = micro_at(128, 64);
        cfg.trans_bdc.num_blocks = n;
        let m = Model::build(&cfg, 0).unwrap();
        let x = random::<f32>([1, 208, 2, 1], 13);
        assert_eq!(trans_bdc_forward(&m.graph, &m.params, &x).unwrap().shape(), x.shape());
    }
}

struct Oracle<'a> {
    p: &'a ParamStore<f64>,
    eps: f64,
}

impl Oracle<'_> {
    fn w(&self, name: &str) -> &[f64] {
        self.p.tensor(name).unwrap().data()
    }

    fn bn(&self, node: &str, c: usize, v: f64) -> f64 {
        let g = |s: &str| self.w(&format!("{node}.bn.{s}"))[c];
        (v - g("running_mean")) / (g("running_var") + self.eps).sqrt() * g("weight") + g("bias")
    }

    /// Depthwise conv with zero padding followed by BN; `x[c][y][x]`.
    fn dw(&self, node: &str, x: &[Vec<Vec<f64>>], k: usize) -> Vec<Vec<Vec<f64>>> {
        let w = self.w(&format!("{node}.weight"));
        let (h, wd) = (x[0].len(), x[0][0].len());
        let pad = (k / 2) as isize;
        (0..x.len())
            .map(|c| {
                (0..h)
                    .map(|i| {
                        (0..wd)
                            .map(|j| {
                                let mut acc = 0.0;
                                for a in 0..k {
                                    for b in 0..k {
                                        let (y, z) = (i as isize + a as isize - pad, j as isize + b as isize - pad);
                                        if y >= 0 && z >= 0 && (y as usize) < h && (z as usize) < wd {
                                            acc += w[c * k * k + a * k + b] * x[c][y as usize][z as usize];
                                        }
                                    }
                                }
                                self.bn(node, c, acc)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Pointwise conv plus BN on `x[c][token]`.
    fn pw(&self, node: &str, x: &[Vec<f64>], cout: usize) -> Vec<Vec<f64>> {
        let w = self.w(&format!("{node}.weight"));
        let cin = x.len();
        (0..cout)
            .map(|o| {
                (0..x[0].len())
                    .map(|t| self.bn(node, o, (0..cin).map(|i| w[o * cin + i] * x[i][t]).sum()))
                    .collect()
            })
            .collect()
    }

    fn fc(&self, node: &str, x: &[f64], out: usize) -> Vec<f64> {
        let (w, b) = (self.w(&format!("{node}.weight")), self.w(&format!("{node}.bias")));
        (0..out)
            .map(|o| b[o] + (0..x.len()).map(|i| w[o * x.len() + i] * x[i]).sum::<f64>())
            .collect()
    }
}

fn grid(t: &Tensor<f64>) -> Vec<Vec<Vec<f64>>> {
    (0..t.c())
        .map(|c| {
            (0..t.h())
                .map(|i| (0..t.w()).map(|j| t.at(0, c, i, j)).collect())
                .collect()
        })
        .collect()
}

fn flat(g: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    g.iter().map(|c| c.iter().flatten().copied().collect()).collect()
}

#[test]
fn bdc_matches_scalar_oracle() {
    let m = Model::build(&micro_at(128, 128), 21).unwrap();
    let mut p = m.params.cast::<f64>();
    randomize_bn(&mut p, 22);
    let x = random::<f64>([1, 208, 2, 2], 23);
    let got = bdc_forward(&m.graph, &p, 0, &x).unwrap();

    let o = Oracle { p: &p, eps: 1e-5 };
    let pre = "trans_bdc.block0.bdc";
    let xg = grid(&x);
    let a = flat(&o.dw(&format!("{pre}.dw3x3"), &xg, 3));
    let b = flat(&o.dw(&format!("{pre}.dw1x1"), &xg, 1));
    let d = flat(&o.dw(&format!("{pre}.dwsep.dw"), &xg, 3));
    let s = o.pw(&format!("{pre}.dwsep.pw"), &d, 208);
    let xf = flat(&xg);
    let delta: Vec<Vec<f64>> = (0..208)
        .map(|c| (0..4).map(|t| a[c][t] + b[c][t] + s[c][t] + xf[c][t]).collect())
        .collect();
    let pooled: Vec<f64> = delta.iter().map(|c| c.iter().sum::<f64>() / 4.0).collect();
    let h: Vec<f64> = o
        .fc(&format!("{pre}.ca.fc1"), &pooled, 52)
        .into_iter()
        .map(|v| v.clamp(0.0, 6.0))
        .collect();
    let gate: Vec<f64> = o
        .fc(&format!("{pre}.ca.fc2"), &h, 208)
        .into_iter()
        .map(|v| 1.0 / (1.0 + (-v).exp()))
        .collect();
    for c in 0..208 {
        for t in 0..4 {
            let want = gate[c] * delta[c][t];
            let have = got.data()[c * 4 + t];
            assert!((want - have).abs() < 1e-6, "c{c} t{t}: {have} vs {want}");
        }
    }
}

#[test]
fn two_token_attention_matches_oracle() {
    let m = Model::build(&micro_at(64, 128), 31).unwrap();
    let mut p = m.params.cast::<f64>();
    randomize_bn(&mut p, 32);
    let x = random::<f64>([1, 208, 1, 2], 33);
    let got = attention_forward(&m.graph, &p, 0, &x).unwrap();

    let o = Oracle { p: &p, eps: 1e-5 };
    let pre = "trans_bdc.block0.attn";
    let xf = flat(&grid(&x));
    let q = o.pw(&format!("{pre}.q"), &xf, 64);
    let k = o.pw(&format!("{pre}.k"), &xf, 64);
    let v = o.pw(&format!("{pre}.v"), &xf, 128);
    let mut heads = vec![vec![0.0; 2]; 128];
    for h in 0..4 {
        let logit = |i: usize, j: usize| (0..16).map(|d| q[h * 16 + d][i] * k[h * 16 + d][j]).sum::<f64>() / 4.0;
        for i in 0..2 {
            let (l0, l1) = (logit(i, 0), logit(i, 1));
            let p0 = 1.0 / (1.0 + (l1 - l0).exp());
            for e in 0..32 {
                let c = h * 32 + e;
                heads[c][i] = (p0 * v[c][0] + (1.0 - p0) * v[c][1]).clamp(0.0, 6.0);
            }
        }
    }
    let proj = o.pw(&format!("{pre}.proj"), &heads, 208);
    for c in 0..208 {
        for t in 0..2 {
            let want = proj[c][t] + xf[c][t];
            assert!((want - got.data()[c * 2 + t]).abs() < 1e-6);
        }
    }
}

#[test]
fn fmm_with_zero_gate_is_half_local_plus_additive() {
    let m = Model::build(&ModelConfig::micro(), 41).unwrap();
    let mut p = m.params.clone();
    zero_weights(&mut p, "fmm.scale0.gate");
    let g = &m.graph;
    let s1 = random::<f32>([1, 16, 16, 16], 42);
    let x_f2 = random::<f32>([1, 208, 1, 1], 43);
    let seeds = [(g.mark("s1").unwrap(), s1), (g.mark("x_f2").unwrap(), x_f2)];
    let ids = [
        g.find("fmm.scale0.local").unwrap(),
        g.find("fmm.scale0.add_up").unwrap(),
        g.mark("fmm0").unwrap(),
    ];
    let out = evaluate(g, &p, &seeds, &ids).unwrap();
    let want = Tensor::from_fn(out[0].shape(), |[n, c, h, w]| {
        0.5 * out[0].at(n, c, h, w) + out[1].at(n, c, h, w)
    });
    assert_eq!(out[2], want);
}

#[test]
fn fmm_with_zero_additive_and_zero_local_vanishes() {
    let m = Model::build(&ModelConfig::micro(), 44).unwrap();
    let mut p = m.params.clone();
    zero_weights(&mut p, "fmm.scale1.add");
    let s2 = Tensor::zeros([1, 32, 8, 8]);
    let x_f2 = random::<f32>([1, 208, 1, 1], 45);
    let y = fmm_forward(&m.graph, &p, 1, &s2, &x_f2).unwrap();
    assert_eq!(y.shape(), [1, 160, 4, 4]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn seg_head_zero_weights_emit_bias() {
    let m = Model::build(&ModelConfig::micro(), 51).unwrap();
    let mut p = m.params.clone();
    zero_weights(&mut p, "seg_head.");
    let bias = [0.1f32, 0.9, 0.9, -2.0, 0.0, 0.3, 0.5, 0.9];
    p.get_mut("seg_head.classifier.bias")
        .unwrap()
        .tensor
        .data_mut()
        .copy_from_slice(&bias);
    let fmm: Vec<_> = [16, 8, 4, 2]
        .iter()
        .enumerate()
        .map(|(i, &s)| random::<f32>([1, 160, s / 2, s / 2], 52 + i as u64))
        .collect();
    let logits = seg_head_forward(&m.graph, &p, &fmm).unwrap();
    assert_eq!(logits.shape(), [1, 8, 8, 8]);
    for (c, &b) in bias.iter().enumerate() {
        assert!(logits.plane(0, c).iter().all(|&v| v == b));
    }
    let mask = logits_to_mask(&logits, 64, 64).unwrap();
    assert!(mask.classes.iter().all(|&k| k == 1));
    assert!(seg_head_forward(&m.graph, &p, &fmm[..3]).is_err());
}

#[test]
fn single_class_mask_is_all_zero() {
    let mut cfg = ModelConfig::micro();
    cfg.num_classes = 1;
    let m = Model::build(&cfg, 61).unwrap();
    let logits = m.forward(&random::<f32>([1, 5, 64, 64], 62)).unwrap();
    let mask = logits_to_mask(&logits, 64, 64).unwrap();
    assert!(mask.classes.iter().all(|&k| k == 0));
}

#[test]
fn cls_head_products() {
    let mut cfg = ModelConfig::micro();
    cfg.head = HeadKind::Cls;
    let m = Model::build(&cfg, 71).unwrap();
    let mut p = m.params.clone();
    let w = p.tensor("cls_head.fc.weight").unwrap().clone();
    let b = p.tensor("cls_head.fc.bias").unwrap().data().to_vec();

    let c = 0.25f32;
    let y = cls_head_forward(&m.graph, &p, &Tensor::full([1, 208, 1, 1], c)).unwrap();
    assert_eq!(y.shape(), [1, 8, 1, 1]);
    for o in 0..8 {
        let want = b[o] + (0..208).map(|i| w.data()[o * 208 + i] * c).sum::<f32>();
        assert!((y.data()[o] - want).abs() < 1e-5);
    }

    zero_weights(&mut p, "cls_head.fc");
    let y = cls_head_forward(&m.graph, &p, &random::<f32>([1, 208, 1, 1], 72)).unwrap();
    assert_eq!(y.data(), &b[..]);
}

#[test]
fn full_forward_checks_mode_and_channels() {
    let m = Model::build(&ModelConfig::micro(), 81).unwrap();
    let img = crate::gme::ImageU8::from_fn(64, 64, |x, y| [(x * 4) as u8, (y * 4) as u8, 100]).unwrap();
    let stack = build_gme_stack(&img, 5, &Default::default()).unwrap();
    let a = full_forward(&m, &stack, HeadKind::Seg).unwrap();
    let b = full_forward(&m, &stack, HeadKind::Seg).unwrap();
    assert_eq!(a.data(), b.data());
    assert!(full_forward(&m, &stack, HeadKind::Cls).is_err());
    let rgb = build_gme_stack(&img, 3, &Default::default()).unwrap();
    let err = full_forward(&m, &rgb, HeadKind::Seg).unwrap_err().to_string();
    assert!(err.contains("input_channels"), "{err}");
}

fn irb_count(cin: usize, s: &InvertedResidualSpec) -> usize {
    let hid = cin * s.expand_ratio;
    let expand = if s.expand_ratio == 1 { 0 } else { cin * hid + 2 * hid };
    expand + s.kernel * s.kernel * hid + 2 * hid + hid * s.out_channels + 2 * s.out_channels
}

#[test]
fn stem_and_tpem_count_matches_hand_sum() {
    let mut cfg = head_none(ModelConfig::seg());
    cfg.trans_bdc.num_blocks = 0;
    let (_, p) = build_model(&cfg, 0).unwrap();
    // stem conv 3x3 5->16 + BN, stem IRB(3,1,16)
    let mut want = 9 * 5 * 16 + 32 + irb_count(16, &InvertedResidualSpec::new(3, 1, 16, 1));
    let schedule = [
        (16, 3, 4, 16),
        (16, 3, 3, 16),
        (16, 5, 3, 32),
        (32, 5, 3, 32),
        (32, 3, 3, 64),
        (64, 3, 3, 64),
        (64, 5, 6, 96),
        (96, 5, 6, 96),
    ];
    for (cin, k, e, cout) in schedule {
        want += irb_count(cin, &InvertedResidualSpec::new(k, e, cout, 1));
    }
    assert_eq!(p.num_params(), want);
}

#[test]
fn stem_only_config_has_two_nodes() {
    let mut cfg = head_none(ModelConfig::micro());
    cfg.trans_bdc.num_blocks = 0;
    cfg.tpem_stages.clear();
    cfg.stem.blocks.clear();
    let (g, p) = build_model(&cfg, 0).unwrap();
    assert_eq!(g.nodes().len(), 2);
    assert_eq!(p.num_params(), 9 * 5 * 16 + 32);
}

#[test]
fn gme_toggle_changes_only_the_stem_input() {
    let on = Model::build(&ModelConfig::seg(), 0).unwrap();
    let mut cfg = ModelConfig::seg();
    cfg.input_channels = 3;
    let off = Model::build(&cfg, 0).unwrap();
    assert_eq!(on.params.num_params() - off.params.num_params(), 2 * 9 * 16);
    assert!(on.params.names().eq(off.params.names()));
    for (a, b) in on.graph.nodes().iter().zip(off.graph.nodes()).skip(1) {
        assert_eq!(a.shape, b.shape, "{}", a.name);
    }
}

#[test]
fn build_is_deterministic_per_seed() {
    let cfg = ModelConfig::micro();
    let a = Model::build(&cfg, 5).unwrap();
    let b = Model::build(&cfg, 5).unwrap();
    let c = Model::build(&cfg, 6).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
    let x = random::<f32>([1, 5, 64, 64], 1);
    assert_eq!(a.forward(&x).unwrap().data(), b.forward(&x).unwrap().data());
}

#[test]
fn weight_file_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("micro.cfw");
    let m = Model::build(&ModelConfig::micro(), 8).unwrap();
    weights::save_params(&m.params, &path).unwrap();
    let back = weights::load_params(&m.params, &path).unwrap();
    assert_eq!(back, m.params);
    let elems: usize = weights::load_records(&path).unwrap().iter().map(|r| r.data.len()).sum();
    assert_eq!(elems, m.params.num_params() + m.params.num_buffers());

    let mut cfg = ModelConfig::micro();
    cfg.input_channels = 3;
    let other = Model::build(&cfg, 8).unwrap();
    let err = weights::load_params(&other.params, &path).unwrap_err().to_string();
    assert!(err.contains("stem.conv.weight"), "{err}");
}

#[test]
fn palette_is_stable_and_distinct() {
    assert_eq!(palette(3), palette(3));
    let colors: std::collections::HashSet<_> = (0..150).map(palette).collect();
    assert!(colors.len() > 140);
}

#[test]
fn frozen_evaluation_keeps_relu6_pieces() {
    let mut b = GraphBuilder::new(0, 1e-5);
    let x = b.input([1, 3, 1, 1]).unwrap();
    let y = b.activation("act", x, Act::Relu6);
    let (g, p) = b.finish(y).unwrap();
    let p = p.cast::<f64>();
    let base = Tensor::new([1, 3, 1, 1], vec![-1.0, 2.0, 7.0]).unwrap();
    let tr = trace(&g, &p, &base).unwrap();
    let at_base = evaluate_frozen(&g, &p, &[(g.input(), base.clone())], &[g.output()], &tr).unwrap();
    assert_eq!(&at_base[0], tr.output());
    let moved = Tensor::new([1, 3, 1, 1], vec![0.5, 6.5, 5.5]).unwrap();
    let y = evaluate_frozen(&g, &p, &[(g.input(), moved)], &[g.output()], &tr).unwrap();
    assert_eq!(y[0].data(), &[0.0, 6.5, 6.0]);
}
