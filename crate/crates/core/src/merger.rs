//! Cell merging over the split grid: per-cell RoI features, a small CNN
//! over the grid, relation scoring of 4-adjacent pairs, training labels,
//! the merge loss and merge application.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::annotation::{check_partition, Span};
use crate::error::Result;
use crate::geometry::{spatial_compat_feature, BBox, Point, Quad};
use crate::grid_assembler::CellGrid;
use crate::nn::layers::{log_sigmoid, Conv2d, ConvOpts, Linear};
use crate::nn::ops::roi_align;
use crate::nn::{FeatureMap, Init, Scope};

pub const MERGE_THRESHOLD: f64 = 0.8;
pub const ASSIGN_MIN_RATIO: f64 = 0.5;
pub const ROI_SIZE: usize = 7;
pub const SPATIAL_DIM: usize = 18;
/// Cells with a hull smaller than this (in pixels²) get a zero descriptor.
pub const MIN_CELL_AREA: f64 = 1.0;

/// An unordered 4-adjacent pair of grid cells, `a` before `b` in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellPair {
    pub a: (usize, usize),
    pub b: (usize, usize),
}

impl CellPair {
    pub fn horizontal(&self) -> bool {
        self.a.0 == self.b.0
    }
}

/// All 4-adjacent pairs: horizontal pairs row-major, then vertical pairs.
pub fn adjacent_pairs(rows: usize, cols: usize) -> Vec<CellPair> {
    let mut out = Vec::with_capacity(rows * cols.saturating_sub(1) + cols * rows.saturating_sub(1));
    for r in 0..rows {
        for c in 0..cols.saturating_sub(1) {
            out.push(CellPair { a: (r, c), b: (r, c + 1) });
        }
    }
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols {
            out.push(CellPair { a: (r, c), b: (r + 1, c) });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeConfig {
    /// Width of the per-cell descriptor and the grid convolutions.
    pub feature_dim: usize,
    /// Width of the two hidden layers of the relation network.
    pub relation_hidden: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { feature_dim: 512, relation_hidden: 512 }
    }
}

/// Per-cell features `(M * N, D)` in row-major grid order.
#[derive(Debug, Clone)]
pub struct GridFeatures {
    pub rows: usize,
    pub cols: usize,
    pub tensor: Tensor,
    /// Grid cells that were too small to pool from.
    pub degenerate: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct MergeHead {
    fc1: Linear,
    fc2: Linear,
    convs: [Conv2d; 3],
    rel: [Linear; 3],
    dim: usize,
}

impl MergeHead {
    pub fn new(scope: &Scope, channels: usize, config: &MergeConfig) -> Result<Self> {
        let d = config.feature_dim;
        let h = config.relation_hidden;
        let d_in = channels * ROI_SIZE * ROI_SIZE;
        let conv = |i: usize| {
            Conv2d::new(&scope.pp(format!("grid{i}")), d, d, (3, 3), ConvOpts::same(3), Init::Kaiming { fan_in: 9 * d })
        };
        let r_in = 2 * d + SPATIAL_DIM;
        Ok(Self {
            fc1: Linear::new(&scope.pp("fc1"), d_in, d, Init::Kaiming { fan_in: d_in })?,
            fc2: Linear::new(&scope.pp("fc2"), d, d, Init::Kaiming { fan_in: d })?,
            convs: [conv(0)?, conv(1)?, conv(2)?],
            rel: [
                Linear::new(&scope.pp("rel0"), r_in, h, Init::Kaiming { fan_in: r_in })?,
                Linear::new(&scope.pp("rel1"), h, h, Init::Kaiming { fan_in: h })?,
                Linear::new(&scope.pp("rel2"), h, 1, Init::Normal(0.01))?,
            ],
            dim: d,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    /// RoI-pool every cell hull on the stride-4 map and embed it with two
    /// fully connected layers.
    pub fn grid_features(&self, p2: &FeatureMap, grid: &CellGrid) -> Result<GridFeatures> {
        let extent = BBox { x: 0.0, y: 0.0, w: (p2.width() * p2.stride) as f64, h: (p2.height() * p2.stride) as f64 };
        let mut boxes = Vec::new();
        let mut slot = Vec::with_capacity(grid.cells.len());
        let mut degenerate = Vec::new();
        for (i, q) in grid.cells.iter().enumerate() {
            match q.hull().clip(extent.w, extent.h) {
                Some(b) if b.area() >= MIN_CELL_AREA => {
                    slot.push(boxes.len() as u32);
                    boxes.push(b);
                }
                _ => {
                    slot.push(u32::MAX);
                    degenerate.push((i / grid.cols, i % grid.cols));
                }
            }
        }
        let dev = p2.tensor.device();
        let zero = Tensor::zeros((1, self.dim), p2.tensor.dtype(), dev)?;
        let valid = if boxes.is_empty() {
            zero.clone()
        } else {
            let pooled = roi_align(p2, &boxes, ROI_SIZE)?.flatten_from(1)?;
            let f = self.fc2.forward(&self.fc1.forward(&pooled)?.relu()?)?.relu()?;
            Tensor::cat(&[&f, &zero], 0)?
        };
        let zero_row = (valid.dim(0)? - 1) as u32;
        let idx: Vec<u32> = slot.into_iter().map(|s| if s == u32::MAX { zero_row } else { s }).collect();
        let n = idx.len();
        let tensor = valid.index_select(&Tensor::from_vec(idx, n, dev)?, 0)?;
        Ok(GridFeatures { rows: grid.rows, cols: grid.cols, tensor, degenerate })
    }

    /// Three zero-padded 3x3 convolutions over the `M x N` grid.
    pub fn grid_cnn(&self, f: &GridFeatures) -> Result<GridFeatures> {
        let x = f.tensor.t()?.reshape((1, self.dim, f.rows, f.cols))?;
        let x = self.convs[0].forward(&x)?.relu()?;
        let x = self.convs[1].forward(&x)?.relu()?;
        let x = self.convs[2].forward(&x)?;
        let tensor = x.reshape((self.dim, f.rows * f.cols))?.t()?.contiguous()?;
        Ok(GridFeatures { rows: f.rows, cols: f.cols, tensor, degenerate: f.degenerate.clone() })
    }

    /// Relation logits for inputs `(P, 2D + 18)`.
    pub fn relation_logits(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.rel[0].forward(x)?.relu()?;
        let h = self.rel[1].forward(&h)?.relu()?;
        Ok(self.rel[2].forward(&h)?.squeeze(1)?)
    }

    /// Merge logits `(P,)` for `pairs`: the larger of the two ordered
    /// evaluations `[f_i; l_ij; f_j]` and `[f_j; l_ji; f_i]`.
    pub fn score_pairs(&self, f: &GridFeatures, grid: &CellGrid, pairs: &[CellPair]) -> Result<Tensor> {
        let dev = f.tensor.device();
        let dtype = f.tensor.dtype();
        if pairs.is_empty() {
            return Ok(Tensor::zeros(0, dtype, dev)?);
        }
        let p = pairs.len();
        let cols = grid.cols;
        let ia: Vec<u32> = pairs.iter().map(|q| (q.a.0 * cols + q.a.1) as u32).collect();
        let ib: Vec<u32> = pairs.iter().map(|q| (q.b.0 * cols + q.b.1) as u32).collect();
        let fa = f.tensor.index_select(&Tensor::from_vec(ia, p, dev)?, 0)?;
        let fb = f.tensor.index_select(&Tensor::from_vec(ib, p, dev)?, 0)?;
        let mut lab = Vec::with_capacity(p * SPATIAL_DIM);
        let mut lba = Vec::with_capacity(p * SPATIAL_DIM);
        for q in pairs {
            let a = cell_box(grid.cell(q.a.0, q.a.1));
            let b = cell_box(grid.cell(q.b.0, q.b.1));
            lab.extend(spatial_compat_feature(&a, &b));
            lba.extend(spatial_compat_feature(&b, &a));
        }
        let lab = Tensor::from_vec(lab, (p, SPATIAL_DIM), dev)?.to_dtype(dtype)?;
        let lba = Tensor::from_vec(lba, (p, SPATIAL_DIM), dev)?.to_dtype(dtype)?;
        let sab = self.relation_logits(&Tensor::cat(&[&fa, &lab, &fb], 1)?)?;
        let sba = self.relation_logits(&Tensor::cat(&[&fb, &lba, &fa], 1)?)?;
        Ok(sab.maximum(&sba)?)
    }
}

/// Axis-aligned hull of a cell with sides of at least one pixel, so the
/// log-ratio terms of the spatial feature stay finite.
fn cell_box(q: &Quad) -> BBox {
    let b = q.hull();
    BBox { x: b.x, y: b.y, w: b.w.max(1.0), h: b.h.max(1.0) }
}

/// Assign each grid cell to the ground-truth cell maximizing
/// `area(det ∩ gt) / area(det)` when that ratio exceeds 0.5.
pub fn assign_cells(grid: &CellGrid, gt_cells: &[BBox]) -> Vec<Option<usize>> {
    grid.cells
        .iter()
        .map(|q| {
            let d = q.hull();
            if d.area() <= 0.0 {
                return None;
            }
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gt_cells.iter().enumerate() {
                let r = d.intersection_area(g) / d.area();
                if r > ASSIGN_MIN_RATIO && best.is_none_or(|(_, br)| r > br) {
                    best = Some((j, r));
                }
            }
            best.map(|(j, _)| j)
        })
        .collect()
}

pub fn label_pairs(grid: &CellGrid, pairs: &[CellPair], gt_cells: &[BBox]) -> Vec<PairLabel> {
    let owner = assign_cells(grid, gt_cells);
    pairs
        .iter()
        .map(|q| {
            match (owner[q.a.0 * grid.cols + q.a.1], owner[q.b.0 * grid.cols + q.b.1]) {
                (Some(x), Some(y)) if x == y => PairLabel::Positive,
                (Some(_), Some(_)) => PairLabel::Negative,
                _ => PairLabel::Ignore,
            }
        })
        .collect()
}

/// Per-pair binary cross-entropy on logits.
pub fn pair_bce(logits: &Tensor, labels: &[PairLabel]) -> Result<Vec<f64>> {
    let z: Vec<f64> = logits.to_dtype(DType::F64)?.to_vec1()?;
    Ok(z.iter()
        .zip(labels)
        .map(|(&z, l)| match l {
            // -log sigmoid(±z), computed stably
            PairLabel::Positive => softplus(-z),
            PairLabel::Negative => softplus(z),
            PairLabel::Ignore => 0.0,
        })
        .collect())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Hardest `n_pos` positive and `n_neg` negative pairs (largest current loss,
/// ties broken by index).
pub fn ohem_select(losses: &[f64], labels: &[PairLabel], n_pos: usize, n_neg: usize) -> Vec<usize> {
    let pick = |want: PairLabel, n: usize| {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == want).collect();
        idx.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    };
    let mut out = pick(PairLabel::Positive, n_pos);
    out.extend(pick(PairLabel::Negative, n_neg));
    out.sort_unstable();
    out
}

/// Mean BCE over the OHEM-selected pairs; zero when nothing is selected.
pub fn merge_loss(logits: &Tensor, labels: &[PairLabel], n_pos: usize, n_neg: usize) -> Result<Tensor> {
    let dev = logits.device();
    let losses = pair_bce(logits, labels)?;
    let sel = ohem_select(&losses, labels, n_pos, n_neg);
    if sel.is_empty() {
        return Ok(Tensor::zeros((), logits.dtype(), dev)?);
    }
    let n = sel.len();
    let sign: Vec<f64> = sel.iter().map(|&i| if labels[i] == PairLabel::Positive { 1.0 } else { -1.0 }).collect();
    let idx: Vec<u32> = sel.iter().map(|&i| i as u32).collect();
    let z = logits.index_select(&Tensor::from_vec(idx, n, dev)?, 0)?;
    let sign = Tensor::from_vec(sign, n, dev)?.to_dtype(logits.dtype())?;
    Ok((log_sigmoid(&(z * sign)?)?.sum_all()?.neg()? / n as f64)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureCell {
    pub span: Span,
    pub quad: Quad,
}

/// Recognized structure of one table: spans partition the `rows x cols` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableStructure {
    pub rows: usize,
    pub cols: usize,
    /// Row-major by `(start_row, start_col)`.
    pub cells: Vec<StructureCell>,
}

impl TableStructure {
    /// A single cell covering `quad`.
    pub fn single(quad: Quad) -> Self {
        Self { rows: 1, cols: 1, cells: vec![StructureCell { span: Span::unit(0, 0), quad }] }
    }

    pub fn spans(&self) -> Vec<Span> {
        self.cells.iter().map(|c| c.span).collect()
    }

    pub fn validate(&self) -> Result<()> {
        check_partition(&self.spans(), self.rows, self.cols)
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            cells: self.cells.iter().map(|c| StructureCell { span: c.span, quad: c.quad.map(&f) }).collect(),
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn overlaps(a: &Span, b: &Span) -> bool {
    a.start_row <= b.end_row && b.start_row <= a.end_row && a.start_col <= b.end_col && b.start_col <= a.end_col
}

fn bounding(a: &Span, b: &Span) -> Span {
    Span {
        start_row: a.start_row.min(b.start_row),
        end_row: a.end_row.max(b.end_row),
        start_col: a.start_col.min(b.start_col),
        end_col: a.end_col.max(b.end_col),
    }
}

/// Spans obtained by merging every pair with `score >= threshold`: connected
/// components are expanded to their bounding rectangles, and overlapping
/// rectangles are fused until all are disjoint.
pub fn merge_spans(rows: usize, cols: usize, pairs: &[CellPair], scores: &[f64], threshold: f64) -> Vec<Span> {
    let mut parent: Vec<usize> = (0..rows * cols).collect();
    for (q, &s) in pairs.iter().zip(scores) {
        if s >= threshold {
            let a = find(&mut parent, q.a.0 * cols + q.a.1);
            let b = find(&mut parent, q.b.0 * cols + q.b.1);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut rects: Vec<Option<Span>> = vec![None; rows * cols];
    for i in 0..rows * cols {
        let root = find(&mut parent, i);
        let cell = Span::unit(i / cols, i % cols);
        rects[root] = Some(match rects[root] {
            Some(s) => bounding(&s, &cell),
            None => cell,
        });
    }
    let mut spans: Vec<Span> = rects.into_iter().flatten().collect();
    loop {
        let mut fused = false;
        'outer: for i in 0..spans.len() {
            for j in i + 1..spans.len() {
                if overlaps(&spans[i], &spans[j]) {
                    spans[i] = bounding(&spans[i], &spans[j]);
                    spans.swap_remove(j);
                    fused = true;
                    break 'outer;
                }
            }
        }
        if !fused {
            break;
        }
    }
    spans.sort_by_key(|s| (s.start_row, s.start_col));
    spans
}

/// Quad of a span through the grid's separator intersections.
pub fn span_quad(grid: &CellGrid, s: &Span) -> Quad {
    let pts = [
        grid.point(s.start_row, s.start_col),
        grid.point(s.start_row, s.end_col + 1),
        grid.point(s.end_row + 1, s.end_col + 1),
        grid.point(s.end_row + 1, s.start_col),
    ];
    Quad::new(pts).unwrap_or_else(|_| {
        let b = BBox::hull_of(pts).unwrap_or(BBox { x: pts[0].x, y: pts[0].y, w: 0.0, h: 0.0 });
        BBox { x: b.x, y: b.y, w: b.w.max(1e-3), h: b.h.max(1e-3) }.to_quad()
    })
}

pub fn apply_merges(grid: &CellGrid, pairs: &[CellPair], scores: &[f64], threshold: f64) -> TableStructure {
    let spans = merge_spans(grid.rows, grid.cols, pairs, scores, threshold);
    TableStructure {
        rows: grid.rows,
        cols: grid.cols,
        cells: spans.iter().map(|s| StructureCell { span: *s, quad: span_quad(grid, s) }).collect(),
    }
}

/// Labels implied directly by ground-truth spans on a grid that matches the
/// annotation one-to-one.
pub fn oracle_pair_labels(pairs: &[CellPair], spans: &[Span]) -> Vec<PairLabel> {
    let owner = |r: usize, c: usize| spans.iter().position(|s| s.contains(r, c));
    pairs
        .iter()
        .map(|q| if owner(q.a.0, q.a.1) == owner(q.b.0, q.b.1) { PairLabel::Positive } else { PairLabel::Negative })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_count() {
        for (m, n) in [(1, 1), (2, 3), (4, 1), (5, 6)] {
            assert_eq!(adjacent_pairs(m, n).len(), m * (n - 1) + n * (m - 1));
        }
    }

    #[test]
    fn no_merges_gives_unit_cells() {
        let pairs = adjacent_pairs(2, 3);
        let spans = merge_spans(2, 3, &pairs, &vec![0.1; pairs.len()], MERGE_THRESHOLD);
        assert_eq!(spans.len(), 6);
    }

    #[test]
    fn single_merge() {
        let pairs = adjacent_pairs(2, 3);
        let mut scores = vec![0.0; pairs.len()];
        scores[0] = 0.8;
        let spans = merge_spans(2, 3, &pairs, &scores, MERGE_THRESHOLD);
        assert_eq!(spans.len(), 5);
        assert_eq!(spans[0], Span { start_row: 0, end_row: 0, start_col: 0, end_col: 1 });
    }

    #[test]
    fn l_shape_becomes_rectangle() {
        let pairs = adjacent_pairs(2, 2);
        let mut scores = vec![0.0; pairs.len()];
        for (i, q) in pairs.iter().enumerate() {
            if (q.a, q.b) == ((0, 0), (0, 1)) || (q.a, q.b) == ((0, 1), (1, 1)) {
                scores[i] = 0.95;
            }
        }
        let spans = merge_spans(2, 2, &pairs, &scores, MERGE_THRESHOLD);
        assert_eq!(spans, vec![Span { start_row: 0, end_row: 1, start_col: 0, end_col: 1 }]);
    }

    #[test]
    fn ohem_takes_hardest() {
        let losses = [0.1, 0.9, 0.5, 0.7, 0.0];
        let labels = [PairLabel::Positive, PairLabel::Positive, PairLabel::Negative, PairLabel::Negative, PairLabel::Ignore];
        assert_eq!(ohem_select(&losses, &labels, 1, 1), vec![1, 3]);
        assert_eq!(ohem_select(&losses, &labels, 64, 64), vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_pair_loss() {
        let z = Tensor::zeros(1, DType::F64, &candle_core::Device::Cpu).unwrap();
        let v: f64 = merge_loss(&z, &[PairLabel::Positive], 64, 64).unwrap().to_scalar().unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }
}
