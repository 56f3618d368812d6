//! Corner-proposal table detector: corner heatmaps with sub-cell offsets,
//! exhaustive corner pairing into proposals, and a Fast R-CNN head that
//! scores proposals and regresses quadrilaterals.

use std::path::Path;

use candle_core::{DType, Tensor};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, nms, BBox, Point, Quad, ScoredBox};
use crate::nn::backbone::{BackboneConfig, DetectorBackbone};
use crate::nn::layers::{log_sigmoid, sigmoid, Conv2d, ConvBn, ConvOpts, Linear, NormStats};
use crate::nn::ops::{directional_max, roi_align, CornerKind};
use crate::nn::{checkpoint, image_to_tensor, FeatureMap, Heatmap, Init, ParamStore, Scope};

/// Weight of the corner loss in the detector objective.
pub const LAMBDA_CORNER: f64 = 0.2;
/// Minimum IoU guaranteed by the penalty-reduction radius.
pub const RADIUS_MIN_IOU: f64 = 0.3;
pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;
pub const POSITIVE_IOU: f64 = 0.7;
pub const NEGATIVE_IOU: f64 = 0.5;
pub const ROI_SIZE: usize = 7;
/// Prior probability used to initialize heatmap logits.
const HEATMAP_PRIOR_BIAS: f64 = -2.19;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerPoint {
    pub kind: CornerKind,
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Training targets for one corner kind on one feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerTargets {
    pub height: usize,
    pub width: usize,
    /// Row-major `height * width`; 1 at positives, Gaussian-reduced around them.
    pub penalty: Vec<f64>,
    pub positive: Vec<bool>,
    /// `(pixel index, offset)` for every positive pixel, in row-major order.
    pub offsets: Vec<(usize, [f64; 2])>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableProposal {
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub quad: Quad,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalLabel {
    /// Index of the best-matching ground-truth table.
    Positive(usize),
    Negative,
    Ignore,
}

/// Largest per-axis corner displacement `r` (in the box's own units) such
/// that moving both corners by up to `r` in each coordinate keeps IoU with
/// the original box at or above `min_iou`.
pub fn gaussian_radius(w: f64, h: f64, min_iou: f64) -> f64 {
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let worst = |r: f64| -> f64 {
        let base = BBox { x: 0.0, y: 0.0, w, h };
        let mut m = f64::INFINITY;
        for s in 0..16u32 {
            let sgn = |bit: u32| if s & (1 << bit) != 0 { r } else { -r };
            let x0 = sgn(0);
            let y0 = sgn(1);
            let x1 = w + sgn(2);
            let y1 = h + sgn(3);
            let v = if x1 > x0 && y1 > y0 {
                iou(&base, &BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
            } else {
                0.0
            };
            m = m.min(v);
        }
        m
    };
    let (mut lo, mut hi) = (0.0, w.max(h));
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if worst(mid) >= min_iou {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Positive pixel and sub-cell offset for an image-space corner.
pub fn corner_cell(q: Point, stride: usize, height: usize, width: usize) -> ((usize, usize), [f64; 2]) {
    let s = stride as f64;
    let fx = q.x / s;
    let fy = q.y / s;
    let px = (fx.floor().max(0.0) as usize).min(width - 1);
    let py = (fy.floor().max(0.0) as usize).min(height - 1);
    let below_one = 1.0 - 1e-6;
    let ox = (fx - px as f64).clamp(0.0, below_one);
    let oy = (fy - py as f64).clamp(0.0, below_one);
    ((px, py), [ox, oy])
}

/// Heatmap, offset and mask targets for both corner kinds (top-left first).
pub fn make_corner_targets(gt: &[BBox], height: usize, width: usize, stride: usize) -> [CornerTargets; 2] {
    let build = |kind: CornerKind| {
        let mut t = CornerTargets {
            height,
            width,
            penalty: vec![0.0; height * width],
            positive: vec![false; height * width],
            offsets: Vec::new(),
        };
        let mut offs = std::collections::BTreeMap::new();
        for b in gt {
            let q = match kind {
                CornerKind::TopLeft => b.top_left(),
                CornerKind::BottomRight => b.bottom_right(),
            };
            let ((px, py), off) = corner_cell(q, stride, height, width);
            let s = stride as f64;
            let r = gaussian_radius(b.w / s, b.h / s, RADIUS_MIN_IOU).floor().max(0.0);
            let ri = r as i64;
            let sigma = r / 3.0;
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let x = px as i64 + dx;
                    let y = py as i64 + dy;
                    if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                        continue;
                    }
                    let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                    let i = y as usize * width + x as usize;
                    t.penalty[i] = t.penalty[i].max(v);
                }
            }
            let i = py * width + px;
            t.penalty[i] = 1.0;
            t.positive[i] = true;
            offs.insert(i, off);
        }
        t.offsets = offs.into_iter().collect();
        t
    };
    [build(CornerKind::TopLeft), build(CornerKind::BottomRight)]
}

/// Corner decoding on plain row-major grids: 3x3 peak test by equality,
/// top-k by score (ties by row-major index), then the score threshold.
#[allow(clippy::too_many_arguments)]
pub fn decode_corner_grid(
    kind: CornerKind,
    height: usize,
    width: usize,
    heat: &[f64],
    off_x: &[f64],
    off_y: &[f64],
    stride: usize,
    top_k: usize,
    threshold: f64,
) -> Vec<CornerPoint> {
    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let v = heat[y * width + x];
            let mut m = v;
            for ny in y.saturating_sub(1)..=(y + 1).min(height - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(width - 1) {
                    m = m.max(heat[ny * width + nx]);
                }
            }
            if v == m {
                peaks.push((y * width + x, v));
            }
        }
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    peaks.truncate(top_k);
    let s = stride as f64;
    peaks
        .into_iter()
        .filter(|&(_, v)| v >= threshold)
        .map(|(i, v)| CornerPoint {
            kind,
            x: ((i % width) as f64 + off_x[i]) * s,
            y: ((i / width) as f64 + off_y[i]) * s,
            score: v,
        })
        .collect()
}

pub fn decode_corners(
    kind: CornerKind,
    heatmap: &Heatmap,
    offsets: &FeatureMap,
    top_k: usize,
    threshold: f64,
) -> Result<Vec<CornerPoint>> {
    if top_k == 0 {
        return Err(Error::InvalidInput("top_k must be at least 1".into()));
    }
    let (h, w) = (heatmap.0.height(), heatmap.0.width());
    if offsets.channels() != 2 || offsets.height() != h || offsets.width() != w {
        return Err(Error::InvalidInput("offset map must be (1, 2, H, W) matching the heatmap".into()));
    }
    let heat: Vec<f64> = heatmap.0.tensor.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    let off: Vec<f64> = offsets.tensor.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    let (ox, oy) = off.split_at(h * w);
    Ok(decode_corner_grid(kind, h, w, &heat, ox, oy, heatmap.0.stride, top_k, threshold))
}

/// Every valid (top-left, bottom-right) pair, scored by the corner mean and
/// deduplicated by NMS.
pub fn enumerate_proposals(tl: &[CornerPoint], br: &[CornerPoint], nms_iou: f64) -> Vec<TableProposal> {
    let mut cands = Vec::new();
    for a in tl {
        for b in br {
            if a.x < b.x && a.y < b.y {
                cands.push(TableProposal {
                    bbox: BBox { x: a.x, y: a.y, w: b.x - a.x, h: b.y - a.y },
                    score: 0.5 * (a.score + b.score),
                });
            }
        }
    }
    let scored: Vec<ScoredBox> = cands.iter().map(|p| ScoredBox { bbox: p.bbox, score: p.score }).collect();
    nms(&scored, nms_iou).into_iter().map(|i| cands[i]).collect()
}

pub fn assign_proposal_labels(proposals: &[BBox], gt: &[BBox]) -> Vec<ProposalLabel> {
    proposals
        .iter()
        .map(|p| {
            let best = gt
                .iter()
                .enumerate()
                .map(|(i, g)| (i, iou(p, g)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            match best {
                Some((i, v)) if v > POSITIVE_IOU => ProposalLabel::Positive(i),
                Some((_, v)) if v >= NEGATIVE_IOU => ProposalLabel::Ignore,
                _ => ProposalLabel::Negative,
            }
        })
        .collect()
}

fn box_corners(b: &BBox) -> [Point; 4] {
    [
        Point::new(b.x, b.y),
        Point::new(b.x1(), b.y),
        Point::new(b.x1(), b.y1()),
        Point::new(b.x, b.y1()),
    ]
}

/// 8-d offsets moving each proposal corner (clockwise from top-left) onto
/// the target quad, normalized by the proposal width and height.
pub fn encode_quad(proposal: &BBox, target: &Quad) -> [f64; 8] {
    let mut t = [0.0; 8];
    for (k, (c, q)) in box_corners(proposal).iter().zip(target.points.iter()).enumerate() {
        t[2 * k] = (q.x - c.x) / proposal.w;
        t[2 * k + 1] = (q.y - c.y) / proposal.h;
    }
    t
}

/// Inverse of [`encode_quad`]. Degenerate outputs fall back to the proposal.
pub fn decode_quad(proposal: &BBox, offsets: &[f64]) -> Quad {
    let c = box_corners(proposal);
    let pts = std::array::from_fn(|k| {
        Point::new(c[k].x + offsets[2 * k] * proposal.w, c[k].y + offsets[2 * k + 1] * proposal.h)
    });
    Quad::new(pts).unwrap_or_else(|_| proposal.to_quad())
}

fn smooth_l1(x: &Tensor) -> Result<Tensor> {
    let a = x.abs()?;
    let quad = (x.sqr()? * 0.5)?;
    let lin = (&a - 0.5)?;
    let mask = a.lt(1.0)?;
    Ok(mask.where_cond(&quad, &lin)?)
}

/// Raw corner-branch predictions for one image: heatmap logits `(1, 1, H, W)`
/// and offsets `(1, 2, H, W)` for one corner kind.
#[derive(Debug, Clone)]
pub struct CornerPrediction {
    pub logits: Tensor,
    pub offsets: Tensor,
}

/// Corner loss over a mini-batch. `preds[i]` and `targets[i]` hold both
/// corner kinds of image `i`; `n_tables` is the number of ground-truth tables.
pub fn corner_loss(preds: &[[CornerPrediction; 2]], targets: &[[CornerTargets; 2]], n_tables: usize) -> Result<Tensor> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::InvalidInput("corner predictions and targets must pair up".into()));
    }
    let like = &preds[0][0].logits;
    let dt = like.dtype();
    let dev = like.device();
    let mut focal = Tensor::zeros((), dt, dev)?;
    let mut off = Tensor::zeros((), dt, dev)?;
    let mut n_corners = 0usize;
    for (p2, t2) in preds.iter().zip(targets) {
        for (p, t) in p2.iter().zip(t2) {
            let hw = t.height * t.width;
            let z = p.logits.flatten_all()?;
            if z.dim(0)? != hw {
                return Err(Error::InvalidInput("heatmap and target shapes differ".into()));
            }
            let prob = sigmoid(&z)?;
            let log_p = log_sigmoid(&z)?;
            let log_q = log_sigmoid(&z.neg()?)?;
            let pos = Tensor::from_vec(t.positive.iter().map(|&b| b as u8 as f64).collect::<Vec<_>>(), hw, dev)?
                .to_dtype(dt)?;
            let neg_w = Tensor::from_vec(
                t.penalty
                    .iter()
                    .zip(&t.positive)
                    .map(|(&y, &b)| if b { 0.0 } else { (1.0 - y).powi(FOCAL_BETA) })
                    .collect::<Vec<_>>(),
                hw,
                dev,
            )?
            .to_dtype(dt)?;
            let one_minus = (1.0 - &prob)?;
            let pos_term = (pos * one_minus.powf(FOCAL_ALPHA as f64)? * log_p)?.sum_all()?;
            let neg_term = (neg_w * prob.powf(FOCAL_ALPHA as f64)? * log_q)?.sum_all()?;
            focal = (focal - (pos_term + neg_term)?)?;
            if !t.offsets.is_empty() {
                let idx: Vec<u32> = t.offsets.iter().map(|(i, _)| *i as u32).collect();
                let idx = Tensor::from_vec(idx, t.offsets.len(), dev)?;
                let pred = p.offsets.reshape((2, hw))?.index_select(&idx, 1)?;
                let mut tv = Vec::with_capacity(2 * t.offsets.len());
                tv.extend(t.offsets.iter().map(|(_, o)| o[0]));
                tv.extend(t.offsets.iter().map(|(_, o)| o[1]));
                let tgt = Tensor::from_vec(tv, (2, t.offsets.len()), dev)?.to_dtype(dt)?;
                off = (off + smooth_l1(&(pred - tgt)?)?.sum_all()?)?;
                n_corners += t.offsets.len();
            }
        }
    }
    let focal = if n_tables == 0 { focal.zeros_like()? } else { (focal / n_tables as f64)? };
    let off = if n_corners == 0 { off.zeros_like()? } else { (off / n_corners as f64)? };
    Ok((focal + off)?)
}

/// Fast R-CNN loss over a sampled batch: mean binary cross-entropy plus the
/// L1 regression error summed over the positives' 8-d offsets, divided by
/// the number of positives. `logits` is `(N,)`, `reg` is `(N, 8)`.
pub fn frcn_loss(logits: &Tensor, reg: &Tensor, labels: &[bool], targets: &[Option<[f64; 8]>]) -> Result<Tensor> {
    let n = labels.len();
    if n == 0 || logits.dim(0)? != n || targets.len() != n {
        return Err(Error::InvalidInput("FRCN batch is empty or mismatched".into()));
    }
    let dt = logits.dtype();
    let dev = logits.device();
    let sign = Tensor::from_vec(labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect::<Vec<f64>>(), n, dev)?
        .to_dtype(dt)?;
    let cls = (log_sigmoid(&(logits * sign)?)?.sum_all()?.neg()? / n as f64)?;
    let fg: Vec<(usize, [f64; 8])> = labels
        .iter()
        .zip(targets)
        .enumerate()
        .filter_map(|(i, (&l, t))| if l { t.map(|t| (i, t)) } else { None })
        .collect();
    if fg.is_empty() {
        return Ok(cls);
    }
    let idx = Tensor::from_vec(fg.iter().map(|(i, _)| *i as u32).collect::<Vec<_>>(), fg.len(), dev)?;
    let pred = reg.index_select(&idx, 0)?;
    let tgt = Tensor::from_vec(fg.iter().flat_map(|(_, t)| t.iter().copied()).collect::<Vec<_>>(), (fg.len(), 8), dev)?
        .to_dtype(dt)?;
    let l1 = ((pred - tgt)?.abs()?.sum_all()? / fg.len() as f64)?;
    Ok((cls + l1)?)
}

/// Per-sample FRCN losses (cross-entropy plus L1 for positives), used to rank
/// hard examples.
pub fn frcn_sample_losses(logits: &Tensor, reg: &Tensor, labels: &[bool], targets: &[Option<[f64; 8]>]) -> Result<Vec<f64>> {
    let z: Vec<f64> = logits.to_dtype(DType::F64)?.to_vec1()?;
    let r: Vec<Vec<f64>> = reg.to_dtype(DType::F64)?.to_vec2()?;
    Ok((0..labels.len())
        .map(|i| {
            let y = if labels[i] { 1.0 } else { -1.0 };
            let ce = softplus(-y * z[i]);
            let l1 = match (labels[i], targets[i]) {
                (true, Some(t)) => r[i].iter().zip(t.iter()).map(|(a, b)| (a - b).abs()).sum(),
                _ => 0.0,
            };
            ce + l1
        })
        .collect())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn detector_loss(corner: &Tensor, frcn: &Tensor) -> Result<Tensor> {
    Ok(((corner * LAMBDA_CORNER)? + frcn)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub backbone: BackboneConfig,
    /// Width of the two fully connected FRCN layers.
    pub fc_dim: usize,
    pub top_k: usize,
    pub corner_threshold: f64,
    pub proposal_nms: f64,
    pub score_threshold: f64,
    pub final_nms: f64,
    /// Images are rescaled so the shorter side equals this...
    pub short_side: usize,
    /// ...unless that would push the longer side past this cap.
    pub max_side: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::resnet18(),
            fc_dim: 1024,
            top_k: 100,
            corner_threshold: 0.3,
            proposal_nms: 0.7,
            score_threshold: 0.5,
            final_nms: 0.3,
            short_side: 512,
            max_side: 1024,
        }
    }
}

impl DetectorConfig {
    pub fn desk() -> Self {
        Self { backbone: BackboneConfig::tiny(), fc_dim: 256, short_side: 256, max_side: 512, ..Self::default() }
    }

    /// Scale factor applied to a `w x h` page before inference.
    pub fn scale_for(&self, w: u32, h: u32) -> f64 {
        let short = w.min(h) as f64;
        let long = w.max(h) as f64;
        let s = self.short_side as f64 / short;
        if long * s > self.max_side as f64 {
            self.max_side as f64 / long
        } else {
            s
        }
    }
}

/// One corner branch: two pre-pooling convolutions, directional scans,
/// residual fusion and the heatmap/offset prediction module.
#[derive(Debug, Clone)]
pub struct CornerHead {
    kind: CornerKind,
    pre_a: ConvBn,
    pre_b: ConvBn,
    fuse: ConvBn,
    skip: ConvBn,
    post: ConvBn,
    heat_hidden: Conv2d,
    heat_out: Conv2d,
    off_hidden: Conv2d,
    off_out: Conv2d,
}

impl CornerHead {
    pub fn new(scope: &Scope, channels: usize, kind: CornerKind, norm: NormStats) -> Result<Self> {
        let c = channels;
        let k3 = Init::Kaiming { fan_in: 9 * c };
        let one = ConvOpts { stride: 1, padding: 0, dilation: 1, bias: true };
        Ok(Self {
            kind,
            pre_a: ConvBn::new(&scope.pp("pre_a"), c, c, 3, ConvOpts::same(3), true)?.with_stats(norm),
            pre_b: ConvBn::new(&scope.pp("pre_b"), c, c, 3, ConvOpts::same(3), true)?.with_stats(norm),
            fuse: ConvBn::new(&scope.pp("fuse"), c, c, 3, ConvOpts::same(3), false)?.with_stats(norm),
            skip: ConvBn::new(&scope.pp("skip"), c, c, 1, one, false)?.with_stats(norm),
            post: ConvBn::new(&scope.pp("post"), c, c, 3, ConvOpts::same(3), true)?.with_stats(norm),
            heat_hidden: Conv2d::new(&scope.pp("heat.0"), c, c, (3, 3), ConvOpts::same(3), k3)?,
            heat_out: Conv2d::new(&scope.pp("heat.1"), c, 1, (1, 1), one, Init::Normal(0.01))?
                .with_bias_init(&scope.pp("heat.1"), HEATMAP_PRIOR_BIAS)?,
            off_hidden: Conv2d::new(&scope.pp("off.0"), c, c, (3, 3), ConvOpts::same(3), k3)?,
            off_out: Conv2d::new(&scope.pp("off.1"), c, 2, (1, 1), one, Init::Normal(0.01))?,
        })
    }

    pub fn kind(&self) -> CornerKind {
        self.kind
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<CornerPrediction> {
        let (sa, sb) = self.kind.scans();
        let a = directional_max(&self.pre_a.forward_t(x, train)?, sa)?;
        let b = directional_max(&self.pre_b.forward_t(x, train)?, sb)?;
        let pooled = self.fuse.forward_t(&(a + b)?, train)?;
        let fused = (pooled + self.skip.forward_t(x, train)?)?.relu()?;
        let h = self.post.forward_t(&fused, train)?;
        let logits = self.heat_out.forward(&self.heat_hidden.forward(&h)?.relu()?)?;
        let offsets = self.off_out.forward(&self.off_hidden.forward(&h)?.relu()?)?;
        Ok(CornerPrediction { logits, offsets })
    }
}

#[derive(Debug, Clone)]
pub struct FrcnHead {
    fc1: Linear,
    fc2: Linear,
    cls: Linear,
    reg: Linear,
}

impl FrcnHead {
    pub fn new(scope: &Scope, channels: usize, fc_dim: usize) -> Result<Self> {
        let d_in = channels * ROI_SIZE * ROI_SIZE;
        Ok(Self {
            fc1: Linear::new(&scope.pp("fc1"), d_in, fc_dim, Init::Kaiming { fan_in: d_in })?,
            fc2: Linear::new(&scope.pp("fc2"), fc_dim, fc_dim, Init::Kaiming { fan_in: fc_dim })?,
            cls: Linear::new(&scope.pp("cls"), fc_dim, 1, Init::Normal(0.01))?,
            reg: Linear::new(&scope.pp("reg"), fc_dim, 8, Init::Normal(0.001))?,
        })
    }

    /// Table logits `(K,)` and quad offsets `(K, 8)` for `K >= 1` proposals.
    pub fn forward(&self, feature: &FeatureMap, proposals: &[BBox]) -> Result<(Tensor, Tensor)> {
        if proposals.is_empty() {
            return Err(Error::InvalidInput("FRCN needs at least one proposal".into()));
        }
        let rois = roi_align(feature, proposals, ROI_SIZE)?;
        let x = rois.flatten_from(1)?;
        let h = self.fc2.forward(&self.fc1.forward(&x)?.relu()?)?.relu()?;
        Ok((self.cls.forward(&h)?.squeeze(1)?, self.reg.forward(&h)?))
    }
}

/// Shared feature map plus raw corner predictions of one image.
#[derive(Debug, Clone)]
pub struct DetectorFeatures {
    pub c5: FeatureMap,
    pub corners: [CornerPrediction; 2],
}

#[derive(Debug, Clone)]
pub struct TableDetector {
    pub config: DetectorConfig,
    store: ParamStore,
    backbone: DetectorBackbone,
    pre: Conv2d,
    heads: [CornerHead; 2],
    frcn: FrcnHead,
}

pub const DETECTOR_KIND: &str = "table_detector";

impl TableDetector {
    pub fn new(config: DetectorConfig, dtype: DType, seed: u64) -> Result<Self> {
        let store = ParamStore::new(dtype, seed);
        let root = store.root();
        let c = config.backbone.out_channels;
        let backbone = DetectorBackbone::new(&root.pp("backbone"), &config.backbone)?;
        let pre = Conv2d::new(&root.pp("pre"), c, c, (3, 3), ConvOpts::same(3), Init::Kaiming { fan_in: 9 * c })?;
        let heads = [
            CornerHead::new(&root.pp("tl"), c, CornerKind::TopLeft, config.backbone.norm)?,
            CornerHead::new(&root.pp("br"), c, CornerKind::BottomRight, config.backbone.norm)?,
        ];
        let frcn = FrcnHead::new(&root.pp("frcn"), c, config.fc_dim)?;
        Ok(Self { config, store, backbone, pre, heads, frcn })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn features(&self, image: &Tensor, train: bool) -> Result<DetectorFeatures> {
        let c5 = self.backbone.forward_t(image, train)?;
        let c5p = self.pre.forward(&c5.tensor)?.relu()?;
        let corners = [self.heads[0].forward_t(&c5p, train)?, self.heads[1].forward_t(&c5p, train)?];
        Ok(DetectorFeatures { c5, corners })
    }

    /// Post-sigmoid heatmap and offset map per corner kind.
    pub fn corner_maps(&self, f: &DetectorFeatures) -> Result<[(Heatmap, FeatureMap); 2]> {
        let s = f.c5.stride;
        let mk = |p: &CornerPrediction| -> Result<(Heatmap, FeatureMap)> {
            Ok((Heatmap::new(FeatureMap::new(sigmoid(&p.logits)?, s)?)?, FeatureMap::new(p.offsets.clone(), s)?))
        };
        Ok([mk(&f.corners[0])?, mk(&f.corners[1])?])
    }

    /// Decoded corners and NMS-filtered proposals (in network-input pixels).
    pub fn proposals(&self, f: &DetectorFeatures) -> Result<Vec<TableProposal>> {
        let maps = self.corner_maps(f)?;
        let cfg = &self.config;
        let tl = decode_corners(CornerKind::TopLeft, &maps[0].0, &maps[0].1, cfg.top_k, cfg.corner_threshold)?;
        let br = decode_corners(CornerKind::BottomRight, &maps[1].0, &maps[1].1, cfg.top_k, cfg.corner_threshold)?;
        Ok(enumerate_proposals(&tl, &br, cfg.proposal_nms))
    }

    pub fn frcn_forward(&self, c5: &FeatureMap, proposals: &[BBox]) -> Result<(Tensor, Tensor)> {
        self.frcn.forward(c5, proposals)
    }

    /// Detections on an already-resized network input of size `w x h`.
    pub fn detect_tensor(&self, image: &Tensor) -> Result<Vec<Detection>> {
        let (_, _, h, w) = image.dims4()?;
        let f = self.features(image, false)?;
        let extent = BBox { x: 0.0, y: 0.0, w: w as f64, h: h as f64 };
        let props: Vec<BBox> = self
            .proposals(&f)?
            .into_iter()
            .filter_map(|p| p.bbox.clip(extent.w, extent.h))
            .collect();
        if props.is_empty() {
            return Ok(Vec::new());
        }
        let (logits, reg) = self.frcn.forward(&f.c5, &props)?;
        let scores: Vec<f64> = sigmoid(&logits)?.to_dtype(DType::F64)?.to_vec1()?;
        let reg: Vec<Vec<f64>> = reg.to_dtype(DType::F64)?.to_vec2()?;
        let mut dets = Vec::new();
        for i in 0..props.len() {
            if scores[i] >= self.config.score_threshold {
                dets.push(Detection { quad: decode_quad(&props[i], &reg[i]), score: scores[i] });
            }
        }
        let scored: Vec<ScoredBox> = dets.iter().map(|d| ScoredBox { bbox: d.quad.hull(), score: d.score }).collect();
        Ok(nms(&scored, self.config.final_nms).into_iter().map(|i| dets[i]).collect())
    }

    /// End-to-end detection on a page; coordinates are in page pixels.
    pub fn detect_tables(&self, page: &RgbImage) -> Result<Vec<Detection>> {
        let (w, h) = page.dimensions();
        let s = self.config.scale_for(w, h);
        let nw = ((w as f64 * s).round() as u32).max(32);
        let nh = ((h as f64 * s).round() as u32).max(32);
        let resized = if (nw, nh) == (w, h) {
            page.clone()
        } else {
            image::imageops::resize(page, nw, nh, image::imageops::FilterType::Triangle)
        };
        let x = image_to_tensor(&resized, self.store.dtype())?;
        let sx = w as f64 / nw as f64;
        let sy = h as f64 / nh as f64;
        Ok(self
            .detect_tensor(&x)?
            .into_iter()
            .map(|d| Detection { quad: d.quad.map(|p| Point::new(p.x * sx, p.y * sy)), score: d.score })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, DETECTOR_KIND, &self.config, &self.store)
    }

    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let config: DetectorConfig = checkpoint::read_config(path, DETECTOR_KIND)?;
        let model = Self::new(config, dtype, 0)?;
        checkpoint::load_into(path, &model.store)?;
        Ok(model)
    }
}

/// Free-standing form of the corner branch forward pass.
pub fn corner_head_forward(head: &CornerHead, dilated_c5: &FeatureMap, train: bool) -> Result<(Heatmap, FeatureMap)> {
    let p = head.forward_t(&dilated_c5.tensor, train)?;
    Ok((
        Heatmap::new(FeatureMap::new(sigmoid(&p.logits)?, dilated_c5.stride)?)?,
        FeatureMap::new(p.offsets, dilated_c5.stride)?,
    ))
}
