// Optimized kernels against their naive references, including a planted
// indexing bug that the sweep has to catch.

use cfkit::verify::{oracle_sweep, OpId, OracleCase};

pub fn run_example() -> cfkit::Result<()> {
    let cases: Vec<OracleCase> = OpId::ALL
        .iter()
        .map(|&op| OracleCase {
            trials: 10,
            ..OracleCase::new(op, 5)
        })
        .collect();
    let report = oracle_sweep(&cases)?;
    for op in &report.ops {
        println!(
            "{:<18} worst |diff| {:.2e}  shape {:?}",
            format!("{:?}", op.op),
            op.worst_diff,
            op.worst_shape
        );
    }

    let mutated = oracle_sweep(&[OracleCase {
        trials: 10,
        ..OracleCase::new(OpId::Conv2dMutated, 5)
    }])?;
    println!("mutated conv caught: {}", !mutated.passed);
    Ok(())
}

fn main() -> cfkit::Result<()> {
    run_example()
}
