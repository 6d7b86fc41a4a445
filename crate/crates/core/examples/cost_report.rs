// Parameter and MAC accounting at 512, 448 and the 224 classification
// setting, plus the JSON/CSV report round trip.

use cfkit::analysis::{emit_report, parse_report_csv, parse_report_json, profile};
use cfkit::{Model, ModelConfig};

pub fn run_example() -> cfkit::Result<()> {
    for (name, cfg) in [
        ("seg", ModelConfig::seg()),
        ("seg-448", ModelConfig::seg_448()),
        ("cls", ModelConfig::cls()),
    ] {
        let m = Model::build(&cfg, 0)?;
        let r = profile(name, &m.graph, &m.params)?;
        println!(
            "{name:<14} {:>9} params  {:.4} GMACs  ({} FLOPs at 2 per MAC)",
            r.totals.costs.params, r.totals.gflops, r.totals.flops_2x
        );
        for e in &r.extras {
            println!("    outside the graph: {} {} ops", e.name, e.ops);
        }
    }

    let m = Model::build(&ModelConfig::micro(), 0)?;
    let r = profile("micro", &m.graph, &m.params)?;
    let json = emit_report(&r, "json")?;
    assert_eq!(parse_report_json(&json)?, r);
    let csv = emit_report(&r, "csv")?;
    let summary = parse_report_csv(&csv)?;
    println!("csv: {} node rows, total macs {}", summary.nodes, summary.totals.macs);
    Ok(())
}

fn main() -> cfkit::Result<()> {
    run_example()
}
