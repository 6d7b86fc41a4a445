// Builds the five-plane network input from a synthetic image and shows
// the Otsu cut used for the edge map.

use cfkit::gme::{
    build_gme_stack, gme_channels, grayscale, otsu_level, sobel_magnitude, GmeOptions, ImageU8, SOBEL_MAX,
};

fn disc(size: usize) -> cfkit::Result<ImageU8> {
    let c = size as f64 / 2.0;
    ImageU8::from_fn(size, size, |x, y| {
        let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
        if r < size as f64 / 3.0 {
            [220, 80, 40]
        } else {
            [30, 60, 140]
        }
    })
}

pub fn run_example() -> cfkit::Result<()> {
    let img = disc(64)?;
    let mag = sobel_magnitude(&grayscale(&img))?;
    let scaled: Vec<f64> = mag.data().iter().map(|v| v / SOBEL_MAX).collect();
    match otsu_level(&scaled) {
        Some((bin, level)) => println!("otsu: bin {bin}, level {level:.4}"),
        None => println!("otsu: flat magnitude, no edges"),
    }

    let raw = gme_channels(&img, &GmeOptions::default())?;
    let edges = raw.data()[4 * 64 * 64..].iter().filter(|&&v| v > 0.5).count();
    println!("edge pixels: {edges} of {}", 64 * 64);

    let stack = build_gme_stack(&img, 5, &GmeOptions::default())?;
    let t = &stack.tensor;
    for c in 0..t.c() {
        let plane = t.plane(0, c);
        let (lo, hi) = plane
            .iter()
            .fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        println!("plane {c}: [{lo:+.3}, {hi:+.3}]");
    }

    let fixed = GmeOptions {
        edge_threshold: Some(0.05),
    };
    let rgb_only = build_gme_stack(&img, 3, &fixed)?;
    println!("3-channel stack: {:?}", rgb_only.tensor.shape());
    Ok(())
}

fn main() -> cfkit::Result<()> {
    run_example()
}
