// Builds the segmentation network and prints its module rollups and the
// first few layers.
//
// ```bash
// cargo run --release --example inspect_model
// ```

use cfkit::analysis::count_params;
use cfkit::{Model, ModelConfig};

pub fn run_example() -> cfkit::Result<()> {
    let cfg = ModelConfig::seg();
    let model = Model::build(&cfg, 0)?;
    let report = count_params(&model.graph, &model.params)?;

    println!(
        "{} nodes, input {:?}",
        model.graph.nodes().len(),
        model.graph.input_shape()
    );
    for node in model.graph.nodes().iter().take(8) {
        println!("  {:<36} {:<12} {:?}", node.name, node.op.kind(), node.shape);
    }
    println!("  ...");
    for r in &report.rollups {
        println!("{:<10} {:>9} params", r.module.as_str(), r.costs.params);
    }
    println!(
        "total {} params ({:.3}M), {} BN buffers",
        report.totals.costs.params,
        report.totals.costs.params as f64 / 1e6,
        report.totals.buffers
    );
    Ok(())
}

fn main() -> cfkit::Result<()> {
    run_example()
}
