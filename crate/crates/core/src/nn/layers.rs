use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use super::params::{Init, Scope};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct ConvOpts {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub bias: bool,
}

impl ConvOpts {
    /// Stride-1 convolution with "same" padding for odd kernels.
    pub fn same(kernel: usize) -> Self {
        Self { stride: 1, padding: kernel / 2, dilation: 1, bias: true }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: usize, kernel: usize) -> Self {
        self.dilation = d;
        self.padding = d * (kernel / 2);
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    opts: ConvOpts,
}

impl Conv2d {
    pub fn new(
        scope: &Scope,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        opts: ConvOpts,
        init: Init,
    ) -> Result<Self> {
        let weight = scope.param("weight", (c_out, c_in, kernel.0, kernel.1), init)?;
        let bias = if opts.bias {
            Some(scope.param("bias", c_out, Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Self { weight, bias, opts })
    }

    pub fn with_bias_init(mut self, scope: &Scope, value: f64) -> Result<Self> {
        let c_out = self.weight.dim(0)?;
        let bias = scope.param("bias", c_out, Init::Const(value))?;
        scope.fill("bias", value)?;
        self.bias = Some(bias);
        Ok(self)
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let ConvOpts { stride, padding, dilation, .. } = self.opts;
        let y = if stride == 1 {
            x.conv2d(&self.weight, padding, 1, dilation, 1)?
        } else {
            let (_, _, kh, kw) = self.weight.dims4()?;
            let x = fit_stride(x, 2, padding, dilation * (kh - 1) + 1, stride)?;
            let x = fit_stride(&x, 3, padding, dilation * (kw - 1) + 1, stride)?;
            x.conv2d(&self.weight, 0, stride, dilation, 1)?
        };
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Pad `dim` by `padding` in front and trim or pad the back so the extent
/// minus the kernel span is a multiple of the stride. The convolution output
/// is unchanged, and the backward pass needs no output padding: the stock
/// gradient derives that padding from the height alone and gets the width
/// wrong when the two remainders differ.
fn fit_stride(x: &Tensor, dim: usize, padding: usize, span: usize, stride: usize) -> Result<Tensor> {
    let n = x.dim(dim)? + 2 * padding;
    if n < span {
        return Err(crate::error::Error::InvalidInput(format!("convolution input of {} is smaller than the kernel", x.dim(dim)?)));
    }
    let back = padding as isize - ((n - span) % stride) as isize;
    let x = x.pad_with_zeros(dim, padding, back.max(0) as usize)?;
    Ok(if back < 0 { x.narrow(dim, 0, x.dim(dim)? - (-back) as usize)? } else { x })
}

/// Single-device batch normalization over `(N, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: Tensor,
    beta: Tensor,
    running_mean: candle_core::Var,
    running_var: candle_core::Var,
    eps: f64,
    momentum: f64,
    stats: NormStats,
}

/// Which statistics batch norm normalizes with outside training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormStats {
    /// Running averages accumulated during training.
    #[default]
    Running,
    /// Statistics of the current input, as during training. Suits models
    /// trained one image per step, where running averages drift away from
    /// what each layer actually saw.
    PerImage,
}

impl BatchNorm2d {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: scope.param("gamma", channels, Init::Const(1.0))?,
            beta: scope.param("beta", channels, Init::Const(0.0))?,
            running_mean: scope.buffer("running_mean", channels, Init::Const(0.0))?,
            running_var: scope.buffer("running_var", channels, Init::Const(1.0))?,
            eps: 1e-5,
            momentum: 0.1,
            stats: NormStats::Running,
        })
    }

    pub fn with_stats(mut self, stats: NormStats) -> Self {
        self.stats = stats;
        self
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.dim(1)?;
        let (mean, var) = if !train && self.stats == NormStats::PerImage {
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let var = x.broadcast_sub(&mean)?.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            (mean, var)
        } else if train {
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let n = (x.elem_count() / c) as f64;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().flatten_all()? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                + (var.detach().flatten_all()? * (m * unbiased))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            )
        };
        let xhat = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xhat
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

/// Convolution followed by batch norm and an optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
    relu: bool,
}

impl ConvBn {
    pub fn new(
        scope: &Scope,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        opts: ConvOpts,
        relu: bool,
    ) -> Result<Self> {
        let conv = Conv2d::new(
            &scope.pp("conv"),
            c_in,
            c_out,
            (kernel, kernel),
            opts.no_bias(),
            Init::Kaiming { fan_in: c_in * kernel * kernel },
        )?;
        let bn = BatchNorm2d::new(&scope.pp("bn"), c_out)?;
        Ok(Self { conv, bn, relu })
    }

    pub fn with_stats(mut self, stats: NormStats) -> Self {
        self.bn = self.bn.with_stats(stats);
        self
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn.forward_t(&self.conv.forward(x)?, train)?;
        Ok(if self.relu { y.relu()? } else { y })
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(scope: &Scope, d_in: usize, d_out: usize, init: Init) -> Result<Self> {
        Ok(Self {
            weight: scope.param("weight", (d_out, d_in), init)?,
            bias: scope.param("bias", d_out, Init::Const(0.0))?,
        })
    }

    pub fn with_bias_init(self, scope: &Scope, value: f64) -> Result<Self> {
        scope.fill("bias", value)?;
        Ok(self)
    }

    /// `x` is `(N, d_in)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Numerically stable `log(sigmoid(x))`.
pub fn log_sigmoid(x: &Tensor) -> Result<Tensor> {
    // log σ(x) = min(x, 0) - log(1 + exp(-|x|))
    let zeros = x.zeros_like()?;
    Ok((x.minimum(&zeros)? - (x.abs()?.neg()?.exp()? + 1.0)?.log()?)?)
}

/// 3x3, stride-2, padding-1 max pooling built from strided views so that it
/// stays differentiable.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let ho = h.div_ceil(2);
    let wo = w.div_ceil(2);
    // pad with the minimum so padding never wins the max
    let min = x.min_keepdim(D::Minus1)?.min_keepdim(D::Minus2)?;
    let need_h = 2 * ho + 1;
    let need_w = 2 * wo + 1;
    let padded = pad_const_like(x, &min, 1, need_h - h - 1, 1, need_w - w - 1)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            let v = padded
                .narrow(2, dy, 2 * ho)?
                .reshape((n, c, ho, 2, need_w))?
                .narrow(3, 0, 1)?
                .squeeze(3)?
                .narrow(3, dx, 2 * wo)?
                .reshape((n, c, ho, wo, 2))?
                .narrow(4, 0, 1)?
                .squeeze(4)?;
            out = Some(match out {
                None => v,
                Some(o) => o.maximum(&v)?,
            });
        }
    }
    Ok(out.expect("nine taps"))
}

fn pad_const_like(
    x: &Tensor,
    value: &Tensor,
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let value = value.detach();
    let mut rows = Vec::new();
    if top > 0 {
        rows.push(value.broadcast_as((n, c, top, w))?.contiguous()?);
    }
    rows.push(x.clone());
    if bottom > 0 {
        rows.push(value.broadcast_as((n, c, bottom, w))?.contiguous()?);
    }
    let x = Tensor::cat(&rows, 2)?;
    let hp = h + top + bottom;
    let mut cols = Vec::new();
    if left > 0 {
        cols.push(value.broadcast_as((n, c, hp, left))?.contiguous()?);
    }
    cols.push(x);
    if right > 0 {
        cols.push(value.broadcast_as((n, c, hp, right))?.contiguous()?);
    }
    Ok(Tensor::cat(&cols, 3)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    fn image(seed: f64) -> Tensor {
        let v: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64 * seed).sin() * 3.0 + seed).collect();
        Tensor::from_vec(v, (1, 2, 5, 4), &Device::Cpu).unwrap()
    }

    #[test]
    fn per_image_norm_matches_training_forward() {
        let store = ParamStore::new(DType::F64, 0);
        let bn = BatchNorm2d::new(&store.root().pp("bn"), 2).unwrap().with_stats(NormStats::PerImage);
        let x = image(1.7);
        let train = bn.forward_t(&x, true).unwrap();
        let before = store.get("bn.running_mean").unwrap().as_tensor().to_vec1::<f64>().unwrap();
        let eval = bn.forward_t(&x, false).unwrap();
        let diff: f64 = (train - eval).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert!(diff < 1e-12);
        // inference leaves the running statistics alone
        let after = store.get("bn.running_mean").unwrap().as_tensor().to_vec1::<f64>().unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn running_norm_uses_accumulated_statistics() {
        let store = ParamStore::new(DType::F64, 0);
        let bn = BatchNorm2d::new(&store.root().pp("bn"), 2).unwrap();
        let x = image(0.3);
        // fresh statistics are mean 0, variance 1: evaluation is nearly the identity
        let y = bn.forward_t(&x, false).unwrap();
        let diff: f64 = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert!(diff < 1e-4);
    }
}
