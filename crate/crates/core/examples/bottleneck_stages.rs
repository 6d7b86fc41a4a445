// Runs the network stage by stage: pyramid taps, Trans-BDC bottleneck,
// the two bottleneck branches on their own, feature merging and the head.

use cfkit::model::{attention_forward, bdc_forward, fmm_forward, seg_head_forward, tpem_forward, trans_bdc_forward};
use cfkit::{Model, ModelConfig, Tensor};

pub fn run_example() -> cfkit::Result<()> {
    let cfg = ModelConfig::micro().with_resolution(128, 128)?;
    let m = Model::build(&cfg, 2)?;
    let (g, p) = (&m.graph, &m.params);
    let x = Tensor::from_fn(g.input_shape(), |[_, c, h, w]| {
        ((c + h * 3 + w * 5) % 17) as f32 / 8.5 - 1.0
    });

    let pyr = tpem_forward(g, p, &x)?;
    for (i, s) in pyr.scales.iter().enumerate() {
        println!("s{}: {:?}", i + 1, s.shape());
    }
    println!("x_f: {:?}", pyr.x_f.shape());

    let bdc = bdc_forward(g, p, 0, &pyr.x_f)?;
    let vit = attention_forward(g, p, 0, &pyr.x_f)?;
    println!("branches: bdc {:?}, attention {:?}", bdc.shape(), vit.shape());

    let x_f2 = trans_bdc_forward(g, p, &pyr.x_f)?;
    let merged = pyr
        .scales
        .iter()
        .enumerate()
        .map(|(i, s)| fmm_forward(g, p, i, s, &x_f2))
        .collect::<cfkit::Result<Vec<_>>>()?;
    for (i, f) in merged.iter().enumerate() {
        println!("fmm{i}: {:?}", f.shape());
    }

    let logits = seg_head_forward(g, p, &merged)?;
    assert_eq!(logits, m.forward(&x)?);
    println!("logits {:?}, equal to the single-pass forward", logits.shape());
    Ok(())
}

fn main() -> cfkit::Result<()> {
    run_example()
}
