//! Ground-truth page and table annotations. The same types serve as the
//! on-disk corpus format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point, Polyline, Quad};

/// Grid span of a cell, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start_row: usize,
    pub end_row: usize,
    pub start_col: usize,
    pub end_col: usize,
}

impl Span {
    pub fn unit(row: usize, col: usize) -> Self {
        Self { start_row: row, end_row: row, start_col: col, end_col: col }
    }

    pub fn rowspan(&self) -> usize {
        self.end_row - self.start_row + 1
    }

    pub fn colspan(&self) -> usize {
        self.end_col - self.start_col + 1
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.start_row..=self.end_row).contains(&row) && (self.start_col..=self.end_col).contains(&col)
    }

    /// Whether this cell straddles row separator `k` (the line above grid row `k`).
    pub fn crosses_row_line(&self, k: usize) -> bool {
        self.start_row < k && k <= self.end_row
    }

    pub fn crosses_col_line(&self, k: usize) -> bool {
        self.start_col < k && k <= self.end_col
    }
}

/// Check that `spans` tile an `rows x cols` grid exactly once.
pub fn check_partition(spans: &[Span], rows: usize, cols: usize) -> Result<()> {
    let mut owner = vec![usize::MAX; rows * cols];
    for (i, s) in spans.iter().enumerate() {
        if s.start_row > s.end_row || s.start_col > s.end_col || s.end_row >= rows || s.end_col >= cols {
            return Err(Error::Annotation(format!("span {s:?} is invalid for a {rows}x{cols} grid")));
        }
        for r in s.start_row..=s.end_row {
            for c in s.start_col..=s.end_col {
                if owner[r * cols + c] != usize::MAX {
                    return Err(Error::Annotation(format!("grid element ({r}, {c}) covered twice")));
                }
                owner[r * cols + c] = i;
            }
        }
    }
    if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(Error::Annotation(format!("grid element ({}, {}) not covered", i / cols, i % cols)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAnnotation {
    pub span: Span,
    /// Word-level text boxes; empty for blank cells.
    pub text_boxes: Vec<BBox>,
}

/// Sinusoidal displacement field `p -> p + d(p)` with
/// `dy = amp_y * sin(2 pi x / wavelength_x + phase_x)` and
/// `dx = amp_x * sin(2 pi y / wavelength_y + phase_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpParams {
    pub amp_y: f64,
    pub wavelength_x: f64,
    pub phase_x: f64,
    pub amp_x: f64,
    pub wavelength_y: f64,
    pub phase_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableAnnotation {
    pub quad: Quad,
    pub rows: usize,
    pub cols: usize,
    /// `rows + 1` lines `y(x)`, top border first.
    pub row_separators: Vec<Polyline>,
    /// `cols + 1` lines `x(y)`, left border first.
    pub col_separators: Vec<Polyline>,
    pub cells: Vec<CellAnnotation>,
    pub ruled: bool,
    pub warp: Option<WarpParams>,
}

impl TableAnnotation {
    pub fn spans(&self) -> Vec<Span> {
        self.cells.iter().map(|c| c.span).collect()
    }

    pub fn bbox(&self) -> BBox {
        self.quad.hull()
    }

    /// Every text box with the index of its cell.
    pub fn text_boxes(&self) -> impl Iterator<Item = (usize, &BBox)> {
        self.cells.iter().enumerate().flat_map(|(i, c)| c.text_boxes.iter().map(move |b| (i, b)))
    }

    /// Apply `f` to all geometry (quad vertices, polylines, text-box corners).
    pub fn transform(&self, f: impl Fn(Point) -> Point) -> Result<Self> {
        let map_box = |b: &BBox| -> Result<BBox> {
            let a = f(b.top_left());
            let c = f(b.bottom_right());
            BBox::from_corners(a.x.min(c.x), a.y.min(c.y), a.x.max(c.x), a.y.max(c.y))
        };
        Ok(Self {
            quad: Quad::new(self.quad.points.map(&f))?,
            rows: self.rows,
            cols: self.cols,
            row_separators: self.row_separators.iter().map(|l| l.map(&f)).collect(),
            col_separators: self.col_separators.iter().map(|l| l.map(&f)).collect(),
            cells: self
                .cells
                .iter()
                .map(|c| Ok(CellAnnotation { span: c.span, text_boxes: c.text_boxes.iter().map(map_box).collect::<Result<_>>()? }))
                .collect::<Result<_>>()?,
            ruled: self.ruled,
            warp: self.warp,
        })
    }

    /// Region bounded by the separators around `span`, as a quad through the
    /// four separator intersections.
    pub fn cell_quad(&self, span: &Span) -> Result<Quad> {
        let top = &self.row_separators[span.start_row];
        let bottom = &self.row_separators[span.end_row + 1];
        let left = &self.col_separators[span.start_col];
        let right = &self.col_separators[span.end_col + 1];
        Quad::new([
            intersect(top, left),
            intersect(top, right),
            intersect(bottom, right),
            intersect(bottom, left),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Annotation("table must have at least one row and column".into()));
        }
        if self.row_separators.len() != self.rows + 1 || self.col_separators.len() != self.cols + 1 {
            return Err(Error::Annotation(format!(
                "{}x{} table needs {} row and {} column separators, found {} and {}",
                self.rows,
                self.cols,
                self.rows + 1,
                self.cols + 1,
                self.row_separators.len(),
                self.col_separators.len()
            )));
        }
        for l in &self.row_separators {
            if l.points.windows(2).any(|w| w[1].x <= w[0].x) {
                return Err(Error::Annotation("row separator is not single-valued in x".into()));
            }
        }
        for l in &self.col_separators {
            if l.points.windows(2).any(|w| w[1].y <= w[0].y) {
                return Err(Error::Annotation("column separator is not single-valued in y".into()));
            }
        }
        let hull = self.bbox();
        for (k, w) in self.row_separators.windows(2).enumerate() {
            for x in sample_range(hull.x, hull.x1()) {
                if w[1].y_at(x) <= w[0].y_at(x) {
                    return Err(Error::Annotation(format!("row separators {k} and {} cross", k + 1)));
                }
            }
        }
        for (k, w) in self.col_separators.windows(2).enumerate() {
            for y in sample_range(hull.y, hull.y1()) {
                if w[1].x_at(y) <= w[0].x_at(y) {
                    return Err(Error::Annotation(format!("column separators {k} and {} cross", k + 1)));
                }
            }
        }
        check_partition(&self.spans(), self.rows, self.cols)?;
        for (i, c) in self.cells.iter().enumerate() {
            let s = &c.span;
            for b in &c.text_boxes {
                let xs = [b.x, b.center().x, b.x1()];
                let ys = [b.y, b.center().y, b.y1()];
                let inside = xs.iter().all(|&x| {
                    b.y >= self.row_separators[s.start_row].y_at(x) && b.y1() <= self.row_separators[s.end_row + 1].y_at(x)
                }) && ys.iter().all(|&y| {
                    b.x >= self.col_separators[s.start_col].x_at(y) && b.x1() <= self.col_separators[s.end_col + 1].x_at(y)
                });
                if !inside {
                    return Err(Error::Annotation(format!("text box {b:?} leaves cell {i} {s:?}")));
                }
            }
        }
        Ok(())
    }
}

fn sample_range(a: f64, b: f64) -> impl Iterator<Item = f64> {
    let n = ((b - a) / 4.0).ceil().max(1.0) as usize;
    (0..=n).map(move |k| a + (b - a) * k as f64 / n as f64)
}

/// Intersection of a row curve `y(x)` and a column curve `x(y)` by bisection
/// on `y - row(col(y))`, which is monotone for gently curved separators.
pub fn intersect(row: &Polyline, col: &Polyline) -> Point {
    let h = |y: f64| y - row.y_at(col.x_at(y));
    let ys = row.points.iter().map(|p| p.y);
    let lo0 = ys.clone().fold(f64::INFINITY, f64::min) - 1.0;
    let hi0 = ys.fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let (mut lo, mut hi) = (lo0, hi0);
    if h(lo) > 0.0 || h(hi) < 0.0 {
        let y = row.y_at(col.x_at(0.5 * (lo + hi)));
        return Point::new(col.x_at(y), y);
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y = 0.5 * (lo + hi);
    Point::new(col.x_at(y), y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocAnnotation {
    pub width: u32,
    pub height: u32,
    pub tables: Vec<TableAnnotation>,
    /// Text boxes outside tables (paragraph distractors).
    pub distractors: Vec<BBox>,
}

impl DocAnnotation {
    pub fn validate(&self) -> Result<()> {
        let page = BBox { x: 0.0, y: 0.0, w: self.width as f64, h: self.height as f64 };
        for (i, t) in self.tables.iter().enumerate() {
            t.validate().map_err(|e| Error::Annotation(format!("table {i}: {e}")))?;
            let b = t.bbox();
            if b.x < page.x || b.y < page.y || b.x1() > page.x1() || b.y1() > page.y1() {
                return Err(Error::Annotation(format!("table {i} leaves the page")));
            }
            for (j, u) in self.tables.iter().enumerate().skip(i + 1) {
                if b.intersection_area(&u.bbox()) > 0.0 {
                    return Err(Error::Annotation(format!("tables {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    pub fn table_boxes(&self) -> Vec<BBox> {
        self.tables.iter().map(|t| t.bbox()).collect()
    }
}
