// Saves a network to a CFW1 file, loads it back into a fresh template and
// checks that every tensor survived bit for bit.

use cfkit::model::weights::{load_params, load_records, save_params};
use cfkit::{Model, ModelConfig};

pub fn run_example() -> cfkit::Result<()> {
    let m = Model::build(&ModelConfig::micro(), 3)?;
    let path = std::env::temp_dir().join("cfkit_weights_example.cfw");
    save_params(&m.params, &path)?;
    println!(
        "{} bytes, {} records",
        std::fs::metadata(&path)?.len(),
        load_records(&path)?.len()
    );

    let template = Model::build(&ModelConfig::micro(), 99)?;
    let loaded = load_params(&template.params, &path)?;
    let same = m.params.iter().zip(loaded.iter()).all(|((_, a), (_, b))| {
        a.tensor
            .data()
            .iter()
            .map(|v| v.to_bits())
            .eq(b.tensor.data().iter().map(|v| v.to_bits()))
    });
    println!("bit-exact: {same}");

    let mut other = ModelConfig::micro();
    other.num_classes = 4;
    let err = load_params(&Model::build(&other, 0)?.params, &path).unwrap_err();
    println!("loading into a 4-class model: {err}");
    Ok(())
}

fn main() -> cfkit::Result<()> {
    run_example()
}
