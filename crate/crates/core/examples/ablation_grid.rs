// Parameters and GFLOPs of every component combination of the ablation
// grid next to the published figures.

use cfkit::analysis::run_ablation;
use cfkit::ModelConfig;

pub fn run_example() -> cfkit::Result<()> {
    let rows = run_ablation(&ModelConfig::seg(), 0)?;
    println!("ViT dw3 dw1 sep CA GME    params  GFLOPs   published");
    for r in &rows {
        let marks: String = r.row.flags().iter().map(|&f| if f { " x  " } else { " -  " }).collect();
        println!(
            "{marks}{:>8.3}M {:>7.3} {:>6.2}M/{:.2}",
            r.params as f64 / 1e6,
            r.gflops,
            r.row.published_params_m,
            r.row.published_gflops
        );
    }
    Ok(())
}

fn main() -> cfkit::Result<()> {
    run_example()
}
