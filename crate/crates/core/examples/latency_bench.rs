// Median and p90 forward latency of the micro network on one and on all
// threads.

use cfkit::analysis::bench_latency;
use cfkit::{Model, ModelConfig};

pub fn run_example() -> cfkit::Result<()> {
    let m = Model::build(&ModelConfig::micro(), 0)?;
    let shape = m.graph.input_shape();
    let mut outputs = Vec::new();
    for threads in [1, 0] {
        let run = bench_latency(&m.graph, &m.params, shape, 2, 5, threads, 11)?;
        let r = &run.record;
        println!(
            "threads {:>2}: median {:.3} ms, p90 {:.3} ms ({} warmup, {} timed)",
            r.thread_count, r.median_ms, r.p90_ms, r.warmup_iters, r.measure_iters
        );
        outputs.push(run.output);
    }
    // Kernels keep a fixed reduction order, so the thread count never
    // changes the result.
    assert_eq!(outputs[0], outputs[1]);
    Ok(())
}

fn main() -> cfkit::Result<()> {
    run_example()
}
