//! Differentiable building blocks on top of candle tensors.

pub mod backbone;
pub mod checkpoint;
pub mod feature;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod params;
pub mod scnn;

use candle_core::{DType, Device, Tensor};
use image::RgbImage;

pub use feature::{FeatureMap, Heatmap};
pub use params::{Init, ParamStore, Scope};

use crate::error::Result;

const PIXEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const PIXEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Normalized `(1, 3, H, W)` tensor of an RGB image.
pub fn image_to_tensor(img: &RgbImage, dtype: DType) -> Result<Tensor> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = (p[c] as f32 / 255.0 - PIXEL_MEAN[c]) / PIXEL_STD[c];
        }
    }
    Ok(Tensor::from_vec(data, (1, 3, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}
