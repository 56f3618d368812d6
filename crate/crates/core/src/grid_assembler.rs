//! From separator probability masks to a grid of shrunk cell quads.
//!
//! Row masks are `H x W/8`: mask column `c` covers crop pixel columns
//! `8c..8c+8`. Column masks are `H/8 x W` and are handled by transposing
//! them into the same "row frame", where `t` runs along the separator and
//! `s` across it. Inside this module coordinates are pixel indices (pixel
//! `i` sits at coordinate `i`); [`assemble_grid`] converts its result to
//! continuous crop coordinates (pixel `i` spans `[i, i + 1)`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::annotation::intersect;
use crate::error::{Error, Result};
use crate::geometry::{BBox, Point, Polyline, Quad, Raster};

pub const BINARIZE_THRESHOLD: f32 = 0.8;
pub const MIN_COMPONENT_PIXELS: usize = 4;
pub const POLY_DEGREE: usize = 3;
pub const THICKNESS_SCAN_STRIDE: f64 = 8.0;
/// A crop edge counts as covered when a component comes this close to it.
pub const EDGE_MARGIN: f64 = 4.0;
pub const POLYLINE_STEP: f64 = 2.0;
/// Mask cells per crop pixel along the reduced axis.
pub const MASK_REDUCTION: usize = 8;
/// Polylines are extended this far past the crop so intersections exist.
const EXTENSION: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Row,
    Col,
}

pub fn binarize(mask: &Raster<f32>, threshold: f32) -> Raster<bool> {
    mask.map(|&v| v >= threshold)
}

/// An 8-connected set of mask pixels, `(row, col)` in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
    /// Pixels with at least one 4-neighbour outside the component.
    pub contour: Vec<(usize, usize)>,
}

impl Component {
    pub fn from_pixels(mut pixels: Vec<(usize, usize)>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        let set: std::collections::HashSet<_> = pixels.iter().copied().collect();
        let contour = pixels
            .iter()
            .copied()
            .filter(|&(r, c)| {
                r == 0
                    || c == 0
                    || !set.contains(&(r - 1, c))
                    || !set.contains(&(r + 1, c))
                    || !set.contains(&(r, c - 1))
                    || !set.contains(&(r, c + 1))
            })
            .collect();
        Self { pixels, contour }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn row_range(&self) -> (usize, usize) {
        let lo = self.pixels.iter().map(|p| p.0).min().unwrap_or(0);
        let hi = self.pixels.iter().map(|p| p.0).max().unwrap_or(0);
        (lo, hi)
    }

    pub fn col_range(&self) -> (usize, usize) {
        let lo = self.pixels.iter().map(|p| p.1).min().unwrap_or(0);
        let hi = self.pixels.iter().map(|p| p.1).max().unwrap_or(0);
        (lo, hi)
    }

    /// `(min row, max row, count)` per occupied mask column, in column order.
    fn column_profile(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut cols: std::collections::BTreeMap<usize, (usize, usize, usize)> = Default::default();
        for &(r, c) in &self.pixels {
            let e = cols.entry(c).or_insert((r, r, 0));
            e.0 = e.0.min(r);
            e.1 = e.1.max(r);
            e.2 += 1;
        }
        cols.into_iter().map(|(c, (lo, hi, n))| (c, lo, hi, n)).collect()
    }

    fn union(&self, other: &Component) -> Component {
        let mut px = self.pixels.clone();
        px.extend_from_slice(&other.pixels);
        Component::from_pixels(px)
    }
}

/// 8-connected components with at least [`MIN_COMPONENT_PIXELS`] pixels,
/// ordered by their first pixel in row-major order.
pub fn extract_components(mask: &Raster<bool>) -> Vec<Component> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            pixels.push((r, c));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let nr = r as i64 + dr;
                    let nc = c as i64 + dc;
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if mask.data[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if pixels.len() >= MIN_COMPONENT_PIXELS {
            out.push(Component::from_pixels(pixels));
        }
    }
    out
}

/// Polynomial in a normalized variable: `f(t) = sum_k c_k ((t - shift) / scale)^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    pub coeffs: Vec<f64>,
    pub shift: f64,
    pub scale: f64,
}

impl Poly {
    pub fn constant(v: f64) -> Self {
        Self { coeffs: vec![v], shift: 0.0, scale: 1.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let u = (t - self.shift) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }

    /// Coefficients of the same polynomial in the raw variable `t`
    /// (lowest degree first).
    pub fn raw_coefficients(&self) -> Vec<f64> {
        let n = self.coeffs.len();
        let mut out = vec![0.0; n];
        // expand c_k * ((t - shift) / scale)^k binomially
        for (k, &c) in self.coeffs.iter().enumerate() {
            let f = c / self.scale.powi(k as i32);
            for j in 0..=k {
                let binom = (0..j).fold(1.0, |acc, i| acc * (k - i) as f64 / (i + 1) as f64);
                out[j] += f * binom * (-self.shift).powi((k - j) as i32);
            }
        }
        out
    }

    /// Least-squares fit of degree `min(degree, n - 1)`.
    pub fn fit(points: &[(f64, f64)], degree: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Geometry("cannot fit a polynomial to zero points".into()));
        }
        let d = degree.min(points.len() - 1);
        let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let shift = 0.5 * (lo + hi);
        let scale = (0.5 * (hi - lo)).max(1.0);
        let a = DMatrix::from_fn(points.len(), d + 1, |i, k| ((points[i].0 - shift) / scale).powi(k as i32));
        let b = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
        let sol = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::Geometry(format!("polynomial fit failed: {e}")))?;
        Ok(Self { coeffs: sol.iter().copied().collect(), shift, scale })
    }
}

/// A fitted separator: center curve `s = f(t)`, thickness and extent along `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorLine {
    pub orientation: Orientation,
    pub center: Poly,
    pub thickness: f64,
    pub extent: (f64, f64),
}

impl SeparatorLine {
    /// Center position at `t`, held constant outside the extent.
    pub fn position(&self, t: f64) -> f64 {
        self.center.eval(t.clamp(self.extent.0, self.extent.1))
    }

    /// Center polyline sampled every [`POLYLINE_STEP`] over `[t0, t1]`,
    /// offset across the line by `delta`.
    pub fn polyline(&self, t0: f64, t1: f64, delta: f64) -> Polyline {
        let n = ((t1 - t0) / POLYLINE_STEP).ceil().max(1.0) as usize;
        let pts = (0..=n)
            .map(|k| {
                let t = t0 + (t1 - t0) * k as f64 / n as f64;
                let s = self.position(t) + delta;
                match self.orientation {
                    Orientation::Row => Point::new(t, s),
                    Orientation::Col => Point::new(s, t),
                }
            })
            .collect();
        Polyline { points: pts }
    }
}

/// Along-line coordinate (in crop pixels) of reduced mask column `c`.
fn along(c: usize, scale: usize) -> f64 {
    (scale * c) as f64 + (scale as f64 - 1.0) / 2.0
}

/// Fit the center curve through the per-column midpoints of a component
/// given in the row frame. `scale` is the reduction along `t`.
pub fn fit_center_line(comp: &Component, orientation: Orientation, scale: usize) -> Result<SeparatorLine> {
    let prof = comp.column_profile();
    if prof.len() < 3 {
        return Err(Error::Geometry(format!(
            "separator component spans {} scan positions; at least 3 are needed",
            prof.len()
        )));
    }
    let pts: Vec<(f64, f64)> =
        prof.iter().map(|&(c, lo, hi, _)| (along(c, scale), 0.5 * (lo as f64 + hi as f64))).collect();
    let center = Poly::fit(&pts, POLY_DEGREE)?;
    let (c0, c1) = comp.col_range();
    let extent = ((scale * c0) as f64, (scale * c1 + scale - 1) as f64);
    Ok(SeparatorLine { orientation, center, thickness: 0.0, extent })
}

/// Mean across-line pixel count over scan positions every `scan_stride`
/// crop pixels along the component.
pub fn estimate_thickness(comp: &Component, scale: usize, scan_stride: f64) -> f64 {
    let prof = comp.column_profile();
    if prof.is_empty() {
        return 0.0;
    }
    let step = ((scan_stride / scale as f64).round() as usize).max(1);
    let first = prof[0].0;
    let counts: Vec<f64> = prof.iter().filter(|p| (p.0 - first) % step == 0).map(|p| p.3 as f64).collect();
    counts.iter().sum::<f64>() / counts.len() as f64
}

/// Upper and lower border polylines `f -/+ lw/2` over `[t0, t1]`.
pub fn border_lines(line: &SeparatorLine, t0: f64, t1: f64) -> (Polyline, Polyline) {
    let h = line.thickness / 2.0;
    (line.polyline(t0, t1, -h), line.polyline(t0, t1, h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major shrunk cell quads.
    pub cells: Vec<Quad>,
    /// `(rows + 1) x (cols + 1)` center-line intersections, row-major.
    pub points: Vec<Point>,
    pub row_lines: Vec<SeparatorLine>,
    pub col_lines: Vec<SeparatorLine>,
}

impl CellGrid {
    pub fn cell(&self, r: usize, c: usize) -> &Quad {
        &self.cells[r * self.cols + c]
    }

    pub fn point(&self, r: usize, c: usize) -> Point {
        self.points[r * (self.cols + 1) + c]
    }

    /// Shift every coordinate by `(dx, dy)`.
    pub fn translate(&self, dx: f64, dy: f64) -> CellGrid {
        let mv = |p: Point| Point::new(p.x + dx, p.y + dy);
        let shift_line = |l: &SeparatorLine| {
            let (da, ds) = match l.orientation {
                Orientation::Row => (dx, dy),
                Orientation::Col => (dy, dx),
            };
            let mut l = l.clone();
            l.center.shift += da;
            if let Some(c0) = l.center.coeffs.first_mut() {
                *c0 += ds;
            }
            l.extent = (l.extent.0 + da, l.extent.1 + da);
            l
        };
        CellGrid {
            rows: self.rows,
            cols: self.cols,
            cells: self.cells.iter().map(|q| q.map(mv)).collect(),
            points: self.points.iter().map(|&p| mv(p)).collect(),
            row_lines: self.row_lines.iter().map(shift_line).collect(),
            col_lines: self.col_lines.iter().map(shift_line).collect(),
        }
    }
}

fn quad_or_box(pts: [Point; 4]) -> Quad {
    Quad::new(pts).unwrap_or_else(|_| {
        let b = BBox::hull_of(pts).unwrap_or(BBox { x: pts[0].x, y: pts[0].y, w: 0.0, h: 0.0 });
        BBox { x: b.x, y: b.y, w: b.w.max(1e-3), h: b.h.max(1e-3) }.to_quad()
    })
}

/// Intersect sorted row and column separators (borders included) of a
/// `width x height` crop into an `(R - 1) x (C - 1)` grid of shrunk cells.
pub fn intersect_grid(rows: &[SeparatorLine], cols: &[SeparatorLine], width: f64, height: f64) -> Result<CellGrid> {
    if rows.len() < 2 || cols.len() < 2 {
        return Err(Error::Geometry(format!(
            "need at least two row and two column separators, got {} and {}",
            rows.len(),
            cols.len()
        )));
    }
    let (x0, x1) = (-EXTENSION, width - 1.0 + EXTENSION);
    let (y0, y1) = (-EXTENSION, height - 1.0 + EXTENSION);
    let row_b: Vec<_> = rows.iter().map(|l| border_lines(l, x0, x1)).collect();
    let col_b: Vec<_> = cols.iter().map(|l| border_lines(l, y0, y1)).collect();
    let row_c: Vec<_> = rows.iter().map(|l| l.polyline(x0, x1, 0.0)).collect();
    let col_c: Vec<_> = cols.iter().map(|l| l.polyline(y0, y1, 0.0)).collect();
    let (m, n) = (rows.len() - 1, cols.len() - 1);
    let mut points = Vec::with_capacity((m + 1) * (n + 1));
    for r in &row_c {
        for c in &col_c {
            points.push(intersect(r, c));
        }
    }
    let mut cells = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let top = &row_b[i].1;
            let bottom = &row_b[i + 1].0;
            let left = &col_b[j].1;
            let right = &col_b[j + 1].0;
            cells.push(quad_or_box([
                intersect(top, left),
                intersect(top, right),
                intersect(bottom, right),
                intersect(bottom, left),
            ]));
        }
    }
    Ok(CellGrid { rows: m, cols: n, cells, points, row_lines: rows.to_vec(), col_lines: cols.to_vec() })
}

/// Non-fatal events during assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub orientation: Orientation,
    pub message: String,
}

struct Fitted {
    comp: Component,
    line: SeparatorLine,
}

fn fit_component(comp: Component, orientation: Orientation, scale: usize) -> Result<Fitted> {
    let mut line = fit_center_line(&comp, orientation, scale)?;
    line.thickness = estimate_thickness(&comp, scale, THICKNESS_SCAN_STRIDE);
    Ok(Fitted { comp, line })
}

fn regions_overlap(a: &SeparatorLine, b: &SeparatorLine, along_len: f64) -> bool {
    let lo = a.extent.0.min(b.extent.0).max(0.0);
    let hi = a.extent.1.max(b.extent.1).min(along_len - 1.0);
    let n = ((hi - lo) / POLYLINE_STEP).ceil().max(1.0) as usize;
    (0..=n).any(|k| {
        let t = lo + (hi - lo) * k as f64 / n as f64;
        let (pa, pb) = (a.position(t), b.position(t));
        let (upper, lower) = if pa <= pb { (a, b) } else { (b, a) };
        let gap = (lower.position(t) - lower.thickness / 2.0) - (upper.position(t) + upper.thickness / 2.0);
        gap < 0.0
    })
}

/// Separator lines from a binary mask in the row frame: `along_len` crop
/// pixels along the lines and `across_len` across them.
pub fn lines_from_mask(
    mask: &Raster<bool>,
    orientation: Orientation,
    scale: usize,
    along_len: f64,
    across_len: f64,
    diags: &mut Vec<Diagnostic>,
) -> Vec<SeparatorLine> {
    let mut fitted = Vec::new();
    for comp in extract_components(mask) {
        let (r0, _) = comp.row_range();
        let (c0, _) = comp.col_range();
        if r0 as f64 >= across_len || (scale * c0) as f64 >= along_len {
            continue;
        }
        match fit_component(comp, orientation, scale) {
            Ok(f) => fitted.push(f),
            Err(e) => diags.push(Diagnostic { orientation, message: format!("dropped component: {e}") }),
        }
    }
    let mid = 0.5 * (along_len - 1.0);
    loop {
        fitted.sort_by(|a, b| a.line.position(mid).total_cmp(&b.line.position(mid)));
        let mut merged = false;
        'outer: for i in 0..fitted.len() {
            for j in i + 1..fitted.len() {
                if regions_overlap(&fitted[i].line, &fitted[j].line, along_len) {
                    let u = fitted[i].comp.union(&fitted[j].comp);
                    diags.push(Diagnostic {
                        orientation,
                        message: format!("merged overlapping separators {i} and {j}"),
                    });
                    match fit_component(u, orientation, scale) {
                        Ok(f) => {
                            fitted.remove(j);
                            fitted[i] = f;
                        }
                        Err(e) => {
                            diags.push(Diagnostic { orientation, message: format!("merge fit failed: {e}") });
                            fitted.remove(j);
                        }
                    }
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    let top_covered = fitted.iter().any(|f| f.comp.row_range().0 as f64 <= EDGE_MARGIN);
    let bottom_covered = fitted.iter().any(|f| f.comp.row_range().1 as f64 >= across_len - 1.0 - EDGE_MARGIN);
    let border = |s: f64| SeparatorLine {
        orientation,
        center: Poly::constant(s),
        thickness: 0.0,
        extent: (0.0, (along_len - 1.0).max(0.0)),
    };
    let mut lines: Vec<SeparatorLine> = Vec::with_capacity(fitted.len() + 2);
    if !top_covered {
        lines.push(border(0.0));
    }
    lines.extend(fitted.into_iter().map(|f| f.line));
    if !bottom_covered {
        lines.push(border(across_len - 1.0));
    }
    lines
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    /// Grid in continuous crop coordinates.
    pub grid: CellGrid,
    pub diagnostics: Vec<Diagnostic>,
}

/// Full post-processing of one table crop of `width x height` pixels.
/// `row_prob` is `H x W/8` and `col_prob` is `H/8 x W` for the (possibly
/// padded) network input; only the top-left `width x height` is used.
pub fn assemble_grid(row_prob: &Raster<f32>, col_prob: &Raster<f32>, width: usize, height: usize, threshold: f32) -> Result<Assembly> {
    let mut diagnostics = Vec::new();
    let rows = lines_from_mask(
        &binarize(row_prob, threshold),
        Orientation::Row,
        MASK_REDUCTION,
        width as f64,
        height as f64,
        &mut diagnostics,
    );
    let cols = lines_from_mask(
        &binarize(col_prob, threshold).transpose(),
        Orientation::Col,
        MASK_REDUCTION,
        height as f64,
        width as f64,
        &mut diagnostics,
    );
    let grid = intersect_grid(&rows, &cols, width as f64, height as f64)?.translate(0.5, 0.5);
    Ok(Assembly { grid, diagnostics })
}
