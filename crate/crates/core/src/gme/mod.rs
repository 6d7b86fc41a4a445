//! Network input construction.
//!
//! The five input planes are R, G, B, the Sobel gradient magnitude of the
//! luma image and a binary edge map. Every plane is first brought to `[0, 1]`
//! (8-bit samples are divided by 255, the magnitude by its largest possible
//! value `4√2`) and then standardized with fixed constants, see
//! [`RGB_MEAN`], [`RGB_STD`] and [`AUX_MEAN_STD`].

mod image;
mod sobel;

pub use image::{decode_image, load_image, ImageU8};
pub use sobel::{edge_map, otsu_level, sobel_gradients, sobel_magnitude, OTSU_BINS};

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

pub const RGB_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const RGB_STD: [f64; 3] = [0.229, 0.224, 0.225];
/// Mean and standard deviation applied to the magnitude and edge planes.
pub const AUX_MEAN_STD: (f64, f64) = (0.5, 0.5);

/// Upper bound of the Sobel magnitude on a `[0, 1]` image.
pub const SOBEL_MAX: f64 = 4.0 * std::f64::consts::SQRT_2;

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Options shared by the input builders.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GmeOptions {
    /// Replaces the Otsu cut; compared against the `[0, 1]` magnitude.
    pub edge_threshold: Option<f64>,
}

/// A standardized network input.
#[derive(Clone, Debug, PartialEq)]
pub struct GmeStack {
    /// `[1, C, H, W]` with `C` = 3 or 5.
    pub tensor: Tensor<f32>,
}

impl GmeStack {
    pub fn channels(&self) -> usize {
        self.tensor.c()
    }
}

/// Luma image in `[0, 1]`, shape `[1, 1, H, W]`.
pub fn grayscale(img: &ImageU8) -> Tensor<f64> {
    Tensor::from_fn([1, 1, img.height(), img.width()], |[_, _, y, x]| {
        let p = img.pixel(x, y);
        (0..3).map(|k| LUMA[k] * p[k] as f64 / 255.0).sum()
    })
}

/// The five planes before standardization: RGB, magnitude and edges, all in
/// `[0, 1]`.
pub fn gme_channels(img: &ImageU8, opts: &GmeOptions) -> Result<Tensor<f64>> {
    let mag = sobel_magnitude(&grayscale(img))?.map(|v| v / SOBEL_MAX);
    let edges = edge_map(&mag, opts.edge_threshold)?;
    let (h, w) = (img.height(), img.width());
    Ok(Tensor::from_fn([1, 5, h, w], |[_, c, y, x]| match c {
        0..=2 => img.pixel(x, y)[c] as f64 / 255.0,
        3 => mag.at(0, 0, y, x),
        _ => edges.at(0, 0, y, x),
    }))
}

/// Plain standardized RGB, the input of the GME-off variant.
pub fn normalize_rgb(img: &ImageU8) -> Tensor<f32> {
    Tensor::from_fn([1, 3, img.height(), img.width()], |[_, c, y, x]| {
        rgb_sample(img.pixel(x, y)[c], c)
    })
}

fn rgb_sample(v: u8, c: usize) -> f32 {
    ((v as f64 / 255.0 - RGB_MEAN[c]) / RGB_STD[c]) as f32
}

/// Builds the network input with `input_channels` planes (3 or 5).
///
/// With 3 channels the Sobel path is skipped and the result equals
/// [`normalize_rgb`].
pub fn build_gme_stack(img: &ImageU8, input_channels: usize, opts: &GmeOptions) -> Result<GmeStack> {
    match input_channels {
        3 => Ok(GmeStack {
            tensor: normalize_rgb(img),
        }),
        5 => {
            let raw = gme_channels(img, opts)?;
            let (mean, std) = AUX_MEAN_STD;
            let tensor = Tensor::from_fn(raw.shape(), |[_, c, y, x]| {
                if c < 3 {
                    rgb_sample(img.pixel(x, y)[c], c)
                } else {
                    ((raw.at(0, c, y, x) - mean) / std) as f32
                }
            });
            Ok(GmeStack { tensor })
        }
        other => config_err(format!("input_channels must be 3 or 5, got {other}")),
    }
}
