// End-to-end inference on a generated image: input planes, forward pass,
// argmax mask and a PPM written to the temp directory.

use cfkit::gme::{build_gme_stack, GmeOptions, ImageU8};
use cfkit::model::{full_forward, logits_to_mask, HeadKind};
use cfkit::{Model, ModelConfig};

pub fn run_example() -> cfkit::Result<()> {
    let img = ImageU8::from_fn(128, 128, |x, y| [(x * 2) as u8, (y * 2) as u8, ((x ^ y) * 2) as u8])?;
    let cfg = ModelConfig::micro().with_resolution(img.height(), img.width())?;
    let model = Model::build(&cfg, 7)?;

    let stack = build_gme_stack(&img, cfg.input_channels, &GmeOptions::default())?;
    let logits = full_forward(&model, &stack, HeadKind::Seg)?;
    println!("logits {:?}", logits.shape());

    let mask = logits_to_mask(&logits, img.height(), img.width())?;
    let mut hist = vec![0usize; cfg.num_classes];
    for &k in &mask.classes {
        hist[k as usize] += 1;
    }
    println!("class histogram {hist:?}");

    let path = std::env::temp_dir().join("cfkit_segment_example.ppm");
    mask.to_image().save_ppm(&path)?;
    println!("mask written to {}", path.display());
    Ok(())
}

fn main() -> cfkit::Result<()> {
    run_example()
}
