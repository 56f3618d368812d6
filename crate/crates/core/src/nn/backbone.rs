//! Residual backbones: a dilated variant for the detector (stride 16) and a
//! feature-pyramid variant for the structure recognizer (stride 4).

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::feature::FeatureMap;
use super::layers::{max_pool_3x3_s2, Conv2d, ConvBn, ConvOpts, NormStats};
use super::params::{Init, Scope};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stem {
    /// 7x7 stride-2 convolution followed by 3x3 stride-2 max pooling.
    Classic,
    /// Two 3x3 stride-2 convolutions.
    Light,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stem: Stem,
    /// Output channels of the four residual stages.
    pub widths: [usize; 4],
    /// Basic blocks per stage.
    pub blocks: [usize; 4],
    /// Channels of the exported feature map.
    pub out_channels: usize,
    #[serde(default)]
    pub norm: NormStats,
}

impl BackboneConfig {
    pub fn resnet18() -> Self {
        Self { stem: Stem::Classic, widths: [64, 128, 256, 512], blocks: [2, 2, 2, 2], out_channels: 64, norm: NormStats::Running }
    }

    /// Desk-scale network with the same stride and output-channel contract.
    pub fn tiny() -> Self {
        Self {
            stem: Stem::Light,
            widths: [16, 32, 64, 64],
            blocks: [1, 1, 1, 1],
            out_channels: 64,
            norm: NormStats::PerImage,
        }
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: ConvBn,
    conv2: ConvBn,
    down: Option<ConvBn>,
}

impl BasicBlock {
    fn new(scope: &Scope, c_in: usize, c_out: usize, stride: usize, dilation: usize, norm: NormStats) -> Result<Self> {
        let conv1 = ConvBn::new(
            &scope.pp("conv1"),
            c_in,
            c_out,
            3,
            ConvOpts::same(3).stride(stride).dilation(dilation, 3),
            true,
        )?
        .with_stats(norm);
        let conv2 = ConvBn::new(&scope.pp("conv2"), c_out, c_out, 3, ConvOpts::same(3).dilation(dilation, 3), false)?
            .with_stats(norm);
        let down = if stride != 1 || c_in != c_out {
            Some(ConvBn::new(
                &scope.pp("down"),
                c_in,
                c_out,
                1,
                ConvOpts { stride, padding: 0, dilation: 1, bias: false },
                false,
            )?
            .with_stats(norm))
        } else {
            None
        };
        Ok(Self { conv1, conv2, down })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.conv2.forward_t(&self.conv1.forward_t(x, train)?, train)?;
        let skip = match &self.down {
            Some(d) => d.forward_t(x, train)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

/// Residual trunk returning the four stage outputs C2..C5.
#[derive(Debug, Clone)]
pub struct ResNet {
    stem: Vec<ConvBn>,
    classic: bool,
    stages: Vec<Vec<BasicBlock>>,
}

impl ResNet {
    /// With `dilate_last`, the final stage keeps stride 16 and uses
    /// dilation 2 in every 3x3 convolution instead of striding.
    pub fn new(scope: &Scope, cfg: &BackboneConfig, dilate_last: bool) -> Result<Self> {
        let w0 = cfg.widths[0];
        let stem = match cfg.stem {
            Stem::Classic => vec![ConvBn::new(
                &scope.pp("stem.0"),
                3,
                w0,
                7,
                ConvOpts::same(7).stride(2),
                true,
            )?
            .with_stats(cfg.norm)],
            Stem::Light => vec![
                ConvBn::new(&scope.pp("stem.0"), 3, w0, 3, ConvOpts::same(3).stride(2), true)?.with_stats(cfg.norm),
                ConvBn::new(&scope.pp("stem.1"), w0, w0, 3, ConvOpts::same(3).stride(2), true)?.with_stats(cfg.norm),
            ],
        };
        let mut stages = Vec::new();
        let mut c_in = w0;
        for (i, (&width, &n)) in cfg.widths.iter().zip(cfg.blocks.iter()).enumerate() {
            let last = i == 3;
            let (stride, dilation) = match (i, last && dilate_last) {
                (0, _) => (1, 1),
                (_, true) => (1, 2),
                _ => (2, 1),
            };
            let mut blocks = Vec::new();
            for b in 0..n.max(1) {
                let s = if b == 0 { stride } else { 1 };
                blocks.push(BasicBlock::new(&scope.pp(format!("layer{}.{b}", i + 1)), c_in, width, s, dilation, cfg.norm)?);
                c_in = width;
            }
            stages.push(blocks);
        }
        Ok(Self { stem, classic: cfg.stem == Stem::Classic, stages })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<[Tensor; 4]> {
        let mut h = x.clone();
        for s in &self.stem {
            h = s.forward_t(&h, train)?;
        }
        if self.classic {
            h = max_pool_3x3_s2(&h)?;
        }
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                h = block.forward_t(&h, train)?;
            }
            outs.push(h.clone());
        }
        Ok(outs.try_into().expect("four stages"))
    }
}

fn check_image(x: &Tensor, min_side: usize, multiple: usize) -> Result<(usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if n != 1 || c != 3 {
        return Err(Error::InvalidInput(format!("expected a (1, 3, H, W) image, got {:?}", x.dims())));
    }
    if h < min_side || w < min_side {
        return Err(Error::InvalidInput(format!("image {w}x{h} is smaller than {min_side} pixels")));
    }
    if h % multiple != 0 || w % multiple != 0 {
        return Err(Error::InvalidInput(format!("image {w}x{h} sides must be multiples of {multiple}")));
    }
    Ok((h, w))
}

/// Dilated trunk plus a 1x1 channel reduction; output stride 16.
#[derive(Debug, Clone)]
pub struct DetectorBackbone {
    trunk: ResNet,
    reduce: Conv2d,
}

impl DetectorBackbone {
    pub const STRIDE: usize = 16;

    pub fn new(scope: &Scope, cfg: &BackboneConfig) -> Result<Self> {
        let trunk = ResNet::new(&scope.pp("trunk"), cfg, true)?;
        let reduce = Conv2d::new(
            &scope.pp("reduce"),
            cfg.widths[3],
            cfg.out_channels,
            (1, 1),
            ConvOpts { stride: 1, padding: 0, dilation: 1, bias: true },
            Init::Kaiming { fan_in: cfg.widths[3] },
        )?;
        Ok(Self { trunk, reduce })
    }

    pub fn forward_t(&self, image: &Tensor, train: bool) -> Result<FeatureMap> {
        check_image(image, 32, 1)?;
        let [_, _, _, c5] = self.trunk.forward_t(image, train)?;
        FeatureMap::new(self.reduce.forward(&c5)?, Self::STRIDE)
    }
}

/// Feature pyramid over the trunk; only the stride-4 level P2 is exported.
#[derive(Debug, Clone)]
pub struct TsrBackbone {
    trunk: ResNet,
    laterals: Vec<Conv2d>,
    smooth: Conv2d,
}

impl TsrBackbone {
    pub const STRIDE: usize = 4;

    pub fn new(scope: &Scope, cfg: &BackboneConfig) -> Result<Self> {
        let trunk = ResNet::new(&scope.pp("trunk"), cfg, false)?;
        let c = cfg.out_channels;
        let laterals = cfg
            .widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                Conv2d::new(
                    &scope.pp(format!("lateral{}", i + 2)),
                    w,
                    c,
                    (1, 1),
                    ConvOpts { stride: 1, padding: 0, dilation: 1, bias: true },
                    Init::Kaiming { fan_in: w },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let smooth = Conv2d::new(&scope.pp("smooth2"), c, c, (3, 3), ConvOpts::same(3), Init::Kaiming { fan_in: c * 9 })?;
        Ok(Self { trunk, laterals, smooth })
    }

    pub fn forward_t(&self, image: &Tensor, train: bool) -> Result<FeatureMap> {
        check_image(image, 32, 32)?;
        let cs = self.trunk.forward_t(image, train)?;
        let mut p = self.laterals[3].forward(&cs[3])?;
        for level in (0..3).rev() {
            let lat = self.laterals[level].forward(&cs[level])?;
            let (_, _, h, w) = lat.dims4()?;
            p = (lat + p.upsample_nearest2d(h, w)?)?;
        }
        FeatureMap::new(self.smooth.forward(&p)?, Self::STRIDE)
    }
}
