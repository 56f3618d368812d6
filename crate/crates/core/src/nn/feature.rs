use candle_core::Tensor;

use crate::error::{Error, Result};

/// A `(1, C, H, W)` tensor together with its stride relative to the input image.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub stride: usize,
}

impl FeatureMap {
    pub fn new(tensor: Tensor, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidInput("feature stride must be >= 1".into()));
        }
        if tensor.rank() != 4 || tensor.dim(0)? != 1 {
            return Err(Error::InvalidInput(format!(
                "feature map must be (1, C, H, W), got {:?}",
                tensor.dims()
            )));
        }
        Ok(Self { tensor, stride })
    }

    pub fn channels(&self) -> usize {
        self.tensor.dims()[1]
    }

    pub fn height(&self) -> usize {
        self.tensor.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims()[3]
    }
}

/// Single-channel post-sigmoid map.
#[derive(Debug, Clone)]
pub struct Heatmap(pub FeatureMap);

impl Heatmap {
    pub fn new(fm: FeatureMap) -> Result<Self> {
        if fm.channels() != 1 {
            return Err(Error::InvalidInput(format!("heatmap needs 1 channel, got {}", fm.channels())));
        }
        Ok(Self(fm))
    }

    /// Row-major `H x W` values.
    pub fn to_grid(&self) -> Result<Vec<Vec<f32>>> {
        Ok(self.0.tensor.squeeze(0)?.squeeze(0)?.to_dtype(candle_core::DType::F32)?.to_vec2()?)
    }
}
