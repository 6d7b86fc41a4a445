// Finite-difference check of hand-written gradients: a linear layer, then
// part of the micro segmentation network.
//
// `cfkit gradcheck micro` runs the same check on every parameter tensor.

use cfkit::verify::{evaluation_point, gradcheck, linear_probe, GradCheckCase};
use cfkit::{Model, ModelConfig};

pub fn run_example() -> cfkit::Result<()> {
    let (g, p, x) = linear_probe(0)?;
    let r = gradcheck(&GradCheckCase::new(&g, &p, &x))?;
    println!(
        "linear probe: {} coordinates, max rel err {:.1e}",
        r.coordinates(),
        r.max_rel_err()
    );

    let m = Model::build(&ModelConfig::micro(), 1)?;
    let (params, input) = evaluation_point(&m.graph, &m.params.cast(), 1)?;
    let mut case = GradCheckCase::new(&m.graph, &params, &input);
    case.filter = vec!["fmm.scale3".into(), "seg_head".into()];
    case.max_coords = 8;
    let r = gradcheck(&case)?;
    for c in &r.checked {
        println!(
            "  {:<36} {:>2} sampled  max rel err {:.1e}",
            c.name, c.sampled, c.max_rel_err
        );
    }
    println!("passed: {}", r.passed);
    Ok(())
}

fn main() -> cfkit::Result<()> {
    run_example()
}
