//! Separator-line prediction: row/column branches with slice-wise message
//! passing, ground-truth separation regions, pixel sampling and the split
//! loss.

use candle_core::{DType, Tensor};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::TableAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{Polyline, Raster};
use crate::grid_assembler::{Orientation, MASK_REDUCTION};
use crate::nn::layers::{log_sigmoid, sigmoid, Conv2d, ConvOpts};
use crate::nn::ops::{resize_bilinear, Axis};
use crate::nn::scnn::{Direction, DownsampleBlock, SpatialConv};
use crate::nn::{FeatureMap, Init, Scope};

pub const MIN_REGION_THICKNESS: f64 = 8.0;
pub const DEFAULT_KERNEL_WIDTH: usize = 9;
pub const PIXELS_PER_CLASS: usize = 1024;
/// Regions stop this many pixels short of the midpoint to a neighbouring
/// separator so that adjacent regions never touch.
const NEIGHBOUR_GAP: f64 = 2.0;

/// One separator branch over the stride-4 pyramid level.
#[derive(Debug, Clone)]
pub struct SplitBranch {
    orientation: Orientation,
    conv: Conv2d,
    down: Vec<DownsampleBlock>,
    scnn: [SpatialConv; 2],
    out: Conv2d,
}

impl SplitBranch {
    pub fn new(scope: &Scope, channels: usize, kernel_width: usize, orientation: Orientation) -> Result<Self> {
        let (axis, dirs) = match orientation {
            Orientation::Row => (Axis::Width, [Direction::LeftToRight, Direction::RightToLeft]),
            Orientation::Col => (Axis::Height, [Direction::TopToBottom, Direction::BottomToTop]),
        };
        let c = channels;
        Ok(Self {
            orientation,
            conv: Conv2d::new(&scope.pp("conv"), c, c, (3, 3), ConvOpts::same(3), Init::Kaiming { fan_in: 9 * c })?,
            down: (0..3)
                .map(|i| DownsampleBlock::new(&scope.pp(format!("down{i}")), c, axis))
                .collect::<Result<_>>()?,
            scnn: [
                SpatialConv::new(&scope.pp("scnn0"), c, kernel_width, dirs[0])?,
                SpatialConv::new(&scope.pp("scnn1"), c, kernel_width, dirs[1])?,
            ],
            out: Conv2d::new(
                &scope.pp("out"),
                c,
                1,
                (1, 1),
                ConvOpts { stride: 1, padding: 0, dilation: 1, bias: true },
                Init::Normal(0.01),
            )?,
        })
    }

    /// Separator logits: `(1, 1, H, W/8)` for rows, `(1, 1, H/8, W)` for columns.
    pub fn forward(&self, p2: &FeatureMap) -> Result<Tensor> {
        let mut x = self.conv.forward(&p2.tensor)?.relu()?;
        for d in &self.down {
            x = d.forward(&x)?;
        }
        x = self.scnn[1].forward(&self.scnn[0].forward(&x)?)?;
        let (_, _, h, w) = x.dims4()?;
        let up = resize_bilinear(&x, 4 * h, 4 * w)?;
        self.out.forward(&up)
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }
}

/// Row and column separator probabilities of one crop.
#[derive(Debug, Clone)]
pub struct SeparatorMasks {
    pub row: Raster<f32>,
    pub col: Raster<f32>,
}

/// Raw logits from both branches, kept as tensors for training.
#[derive(Debug, Clone)]
pub struct SplitLogits {
    pub row: Tensor,
    pub col: Tensor,
}

impl SplitLogits {
    pub fn probabilities(&self) -> Result<SeparatorMasks> {
        let to_raster = |t: &Tensor| -> Result<Raster<f32>> {
            let (_, _, h, w) = t.dims4()?;
            Raster::from_vec(h, w, sigmoid(t)?.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?)
        };
        Ok(SeparatorMasks { row: to_raster(&self.row)?, col: to_raster(&self.col)? })
    }
}

/// A separation region around an annotated line: points with across-line
/// coordinate in `[line(t) - up, line(t) + down]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorRegion {
    pub orientation: Orientation,
    pub line: Polyline,
    pub up: f64,
    pub down: f64,
}

impl SeparatorRegion {
    fn across(&self, t: f64) -> f64 {
        match self.orientation {
            Orientation::Row => self.line.y_at(t),
            Orientation::Col => self.line.x_at(t),
        }
    }

    /// `[lo, hi]` across the line at along-coordinate `t`.
    pub fn band(&self, t: f64) -> (f64, f64) {
        let c = self.across(t);
        (c - self.up, c + self.down)
    }

    pub fn thickness(&self) -> f64 {
        self.up + self.down
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparatorGt {
    pub rows: Vec<SeparatorRegion>,
    pub cols: Vec<SeparatorRegion>,
    pub width: usize,
    pub height: usize,
}

/// Across-coordinate extremes of a line over the along-interval `[a, b]`.
fn line_range(line: &Polyline, orientation: Orientation, a: f64, b: f64) -> (f64, f64) {
    let (key, val): (fn(&crate::geometry::Point) -> f64, fn(&crate::geometry::Point) -> f64) = match orientation {
        Orientation::Row => (|p| p.x, |p| p.y),
        Orientation::Col => (|p| p.y, |p| p.x),
    };
    let at = |t: f64| match orientation {
        Orientation::Row => line.y_at(t),
        Orientation::Col => line.x_at(t),
    };
    let mut lo = at(a).min(at(b));
    let mut hi = at(a).max(at(b));
    for p in &line.points {
        if key(p) > a && key(p) < b {
            lo = lo.min(val(p));
            hi = hi.max(val(p));
        }
    }
    (lo, hi)
}

/// Separation regions for every annotated line of a table given in crop
/// coordinates (`width x height` crop). Each line is translated rigidly
/// away from itself until it touches text of a cell that does not straddle
/// it, never past the crop edge and never closer than a small gap to the
/// midpoint with a neighbouring line; regions thinner than
/// [`MIN_REGION_THICKNESS`] are widened symmetrically.
pub fn make_separator_gt(table: &TableAnnotation, width: usize, height: usize) -> Result<SeparatorGt> {
    let build = |orientation: Orientation| -> Result<Vec<SeparatorRegion>> {
        let (lines, across_len, along_len) = match orientation {
            Orientation::Row => (&table.row_separators, height as f64, width as f64),
            Orientation::Col => (&table.col_separators, width as f64, height as f64),
        };
        let at = |l: &Polyline, t: f64| match orientation {
            Orientation::Row => l.y_at(t),
            Orientation::Col => l.x_at(t),
        };
        let samples: Vec<f64> = {
            let n = (along_len / 2.0).ceil() as usize;
            (0..=n).map(|k| along_len * k as f64 / n as f64).collect()
        };
        let mut out = Vec::with_capacity(lines.len());
        for (k, line) in lines.iter().enumerate() {
            let mut up = f64::INFINITY;
            let mut down = f64::INFINITY;
            for cell in &table.cells {
                let s = cell.span;
                let (crosses, before, after) = match orientation {
                    Orientation::Row => (s.crosses_row_line(k), s.end_row < k, s.start_row >= k),
                    Orientation::Col => (s.crosses_col_line(k), s.end_col < k, s.start_col >= k),
                };
                if crosses {
                    continue;
                }
                for b in &cell.text_boxes {
                    let (a0, a1, s0, s1) = match orientation {
                        Orientation::Row => (b.x, b.x1(), b.y, b.y1()),
                        Orientation::Col => (b.y, b.y1(), b.x, b.x1()),
                    };
                    let (lo, hi) = line_range(line, orientation, a0, a1);
                    if before {
                        up = up.min(lo - s1);
                    } else if after {
                        down = down.min(s0 - hi);
                    }
                }
            }
            if up < 0.0 || down < 0.0 {
                return Err(Error::Annotation(format!(
                    "{orientation:?} separator {k} intersects the text of a cell it does not cross"
                )));
            }
            if k > 0 {
                let gap = samples.iter().map(|&t| at(line, t) - at(&lines[k - 1], t)).fold(f64::INFINITY, f64::min);
                up = up.min((gap / 2.0 - NEIGHBOUR_GAP).max(0.0));
            } else {
                up = up.min(across_len);
            }
            if k + 1 < lines.len() {
                let gap = samples.iter().map(|&t| at(&lines[k + 1], t) - at(line, t)).fold(f64::INFINITY, f64::min);
                down = down.min((gap / 2.0 - NEIGHBOUR_GAP).max(0.0));
            } else {
                down = down.min(across_len);
            }
            let t = up + down;
            if t < MIN_REGION_THICKNESS {
                let extra = (MIN_REGION_THICKNESS - t) / 2.0;
                up += extra;
                down += extra;
            }
            out.push(SeparatorRegion { orientation, line: line.clone(), up, down });
        }
        Ok(out)
    };
    Ok(SeparatorGt { rows: build(Orientation::Row)?, cols: build(Orientation::Col)?, width, height })
}

/// Mark every reduced-resolution mask pixel that overlaps a region.
/// Returns the row mask (`mask_h x mask_w / 8`) and column mask
/// (`mask_h / 8 x mask_w`) for a network input of `mask_h x mask_w`.
pub fn rasterize_gt(gt: &SeparatorGt, mask_h: usize, mask_w: usize) -> (Raster<bool>, Raster<bool>) {
    let r = MASK_REDUCTION;
    let row = rasterize_frame(&gt.rows, gt.width, gt.height, mask_h, mask_w.div_ceil(r), r);
    let col = rasterize_frame(&gt.cols, gt.height, gt.width, mask_w, mask_h.div_ceil(r), r).transpose();
    (row, col)
}

/// Rasterize in the row frame: `along` pixels along the lines, `across`
/// across them; the output is `out_across x out_along`.
fn rasterize_frame(
    regions: &[SeparatorRegion],
    along: usize,
    across: usize,
    out_across: usize,
    out_along: usize,
    reduction: usize,
) -> Raster<bool> {
    let mut m = Raster::filled(out_across, out_along, false);
    let limit = across.min(out_across) as f64;
    for reg in regions {
        for t in 0..along.min(out_along * reduction) {
            let (lo, hi) = reg.band(t as f64 + 0.5);
            let lo = lo.max(0.0);
            let hi = hi.min(limit);
            if hi <= lo {
                continue;
            }
            // pixel i spans [i, i + 1): overlap iff i + 1 > lo and i < hi
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(out_across);
            for i in first..last {
                m.set(i, t / reduction, true);
            }
        }
    }
    m
}

/// Sampled mask indices (row-major) per branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSamples {
    pub row_pos: Vec<usize>,
    pub row_neg: Vec<usize>,
    pub col_pos: Vec<usize>,
    pub col_neg: Vec<usize>,
}

fn pick(rng: &mut ChaCha8Rng, pool: &[usize], n: usize) -> Vec<usize> {
    if pool.len() <= n {
        return pool.to_vec();
    }
    let mut idx: Vec<usize> = sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
    idx.sort_unstable();
    idx
}

/// Uniformly sample up to `per_class` separator and background pixels per
/// branch, restricted to mask pixels covering the `width x height` crop.
pub fn sample_split_pixels(
    row: &Raster<bool>,
    col: &Raster<bool>,
    width: usize,
    height: usize,
    per_class: usize,
    seed: u64,
) -> SplitSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = MASK_REDUCTION;
    let split = |m: &Raster<bool>, h_lim: usize, w_lim: usize| {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for i in 0..m.height.min(h_lim) {
            for j in 0..m.width.min(w_lim) {
                let idx = i * m.width + j;
                if m.data[idx] {
                    pos.push(idx);
                } else {
                    neg.push(idx);
                }
            }
        }
        (pos, neg)
    };
    let (rp, rn) = split(row, height, width.div_ceil(r));
    let (cp, cn) = split(col, height.div_ceil(r), width);
    SplitSamples {
        row_pos: pick(&mut rng, &rp, per_class),
        row_neg: pick(&mut rng, &rn, per_class),
        col_pos: pick(&mut rng, &cp, per_class),
        col_neg: pick(&mut rng, &cn, per_class),
    }
}

fn branch_bce(logits: &Tensor, pos: &[usize], neg: &[usize]) -> Result<Tensor> {
    let n = pos.len() + neg.len();
    let dev = logits.device();
    if n == 0 {
        return Ok(Tensor::zeros((), logits.dtype(), dev)?);
    }
    let flat = logits.flatten_all()?;
    let mut idx: Vec<u32> = pos.iter().map(|&i| i as u32).collect();
    idx.extend(neg.iter().map(|&i| i as u32));
    let sign: Vec<f64> = std::iter::repeat_n(1.0, pos.len()).chain(std::iter::repeat_n(-1.0, neg.len())).collect();
    let z = flat.index_select(&Tensor::from_vec(idx, n, dev)?, 0)?;
    let sign = Tensor::from_vec(sign, n, dev)?.to_dtype(logits.dtype())?;
    Ok((log_sigmoid(&(z * sign)?)?.sum_all()?.neg()? / n as f64)?)
}

/// Mean binary cross-entropy over the sampled row pixels plus the same over
/// the sampled column pixels.
pub fn split_loss(logits: &SplitLogits, samples: &SplitSamples) -> Result<Tensor> {
    let r = branch_bce(&logits.row, &samples.row_pos, &samples.row_neg)?;
    let c = branch_bce(&logits.col, &samples.col_pos, &samples.col_neg)?;
    Ok((r + c)?)
}
