//! Slice-by-slice message passing and the axis-wise down-sampling block of
//! the separator branches.

use candle_core::Tensor;

use super::layers::{Conv2d, ConvOpts};
use super::ops::{pair_max_pool, Axis};
use super::params::{Init, Scope};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

/// One spatial-CNN pass: `s'_1 = s_1`, `s'_{k+1} = s_{k+1} + relu(conv(s'_k))`
/// with a single kernel shared by every step. Row-wise passes
/// (left/right) use a `k x 1` kernel running along the height of each
/// column slice, column-wise passes a `1 x k` kernel.
#[derive(Debug, Clone)]
pub struct SpatialConv {
    weight: Tensor,
    bias: Tensor,
    direction: Direction,
    kernel_width: usize,
}

impl SpatialConv {
    pub fn new(scope: &Scope, channels: usize, kernel_width: usize, direction: Direction) -> Result<Self> {
        if kernel_width % 2 == 0 {
            return Err(Error::InvalidInput(format!("kernel width must be odd, got {kernel_width}")));
        }
        Ok(Self {
            weight: scope.param(
                "weight",
                (channels, channels, kernel_width),
                Init::Normal(0.01),
            )?,
            bias: scope.param("bias", channels, Init::Const(0.0))?,
            direction,
            kernel_width,
        })
    }

    /// Build from explicit weights `(C, C, k)` and bias `(C,)`.
    pub fn from_weights(weight: Tensor, bias: Tensor, direction: Direction) -> Result<Self> {
        let kernel_width = weight.dim(2)?;
        if kernel_width % 2 == 0 {
            return Err(Error::InvalidInput(format!("kernel width must be odd, got {kernel_width}")));
        }
        Ok(Self { weight, bias, direction, kernel_width })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (dim, len, reverse) = match self.direction {
            Direction::LeftToRight => (3, w, false),
            Direction::RightToLeft => (3, w, true),
            Direction::TopToBottom => (2, h, false),
            Direction::BottomToTop => (2, h, true),
        };
        let line = if dim == 3 { h } else { w };
        let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
        let bias = self.bias.reshape((1, c, 1))?;
        let mut out: Vec<Option<Tensor>> = vec![None; len];
        let mut prev: Option<Tensor> = None;
        for &k in &order {
            let slice = x.narrow(dim, k, 1)?;
            let updated = match &prev {
                None => slice,
                Some(p) => {
                    let msg = p
                        .reshape((n, c, line))?
                        .conv1d(&self.weight, self.kernel_width / 2, 1, 1, 1)?
                        .broadcast_add(&bias)?
                        .relu()?;
                    let msg = if dim == 3 { msg.reshape((n, c, h, 1))? } else { msg.reshape((n, c, 1, w))? };
                    (slice + msg)?
                }
            };
            prev = Some(updated.clone());
            out[k] = Some(updated);
        }
        let parts: Vec<Tensor> = out.into_iter().map(|t| t.expect("every slice visited")).collect();
        Ok(Tensor::cat(&parts, dim)?)
    }
}

/// Pair max-pool along one axis, then 3x3 conv and ReLU.
#[derive(Debug, Clone)]
pub struct DownsampleBlock {
    axis: Axis,
    conv: Conv2d,
}

impl DownsampleBlock {
    pub fn new(scope: &Scope, channels: usize, axis: Axis) -> Result<Self> {
        let conv = Conv2d::new(
            &scope.pp("conv"),
            channels,
            channels,
            (3, 3),
            ConvOpts::same(3),
            Init::Kaiming { fan_in: channels * 9 },
        )?;
        Ok(Self { axis, conv })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.conv.forward(&pair_max_pool(x, self.axis)?)?.relu()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn zeros_scnn(c: usize, k: usize, dir: Direction) -> SpatialConv {
        SpatialConv::from_weights(
            Tensor::zeros((c, c, k), candle_core::DType::F64, &Device::Cpu).unwrap(),
            Tensor::zeros(c, candle_core::DType::F64, &Device::Cpu).unwrap(),
            dir,
        )
        .unwrap()
    }

    #[test]
    fn zero_kernel_is_identity() {
        let x = Tensor::randn(0f64, 1., (1, 3, 5, 4), &Device::Cpu).unwrap();
        for dir in [Direction::LeftToRight, Direction::RightToLeft, Direction::TopToBottom, Direction::BottomToTop] {
            let y = zeros_scnn(3, 9, dir).forward(&x).unwrap();
            let d = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn single_slice_is_identity() {
        let x = Tensor::randn(0f64, 1., (1, 2, 6, 1), &Device::Cpu).unwrap();
        let w = Tensor::randn(0f64, 1., (2, 2, 3), &Device::Cpu).unwrap();
        let b = Tensor::ones(2, candle_core::DType::F64, &Device::Cpu).unwrap();
        let s = SpatialConv::from_weights(w, b, Direction::LeftToRight).unwrap();
        let y = s.forward(&x).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap(), x.flatten_all().unwrap().to_vec1::<f64>().unwrap());
    }

    #[test]
    fn even_kernel_rejected() {
        let w = Tensor::zeros((1, 1, 4), candle_core::DType::F64, &Device::Cpu).unwrap();
        let b = Tensor::zeros(1, candle_core::DType::F64, &Device::Cpu).unwrap();
        assert!(SpatialConv::from_weights(w, b, Direction::TopToBottom).is_err());
    }
}
