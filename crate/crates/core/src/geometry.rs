//! Axis-aligned and quadrilateral box algebra.
//!
//! Boxes are `(x, y, w, h)` with `(x, y)` the top-left corner, in pixels.
//! Quads list their corners clockwise in image coordinates (y grows down),
//! starting at the top-left corner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::Geometry(format!("non-finite box ({x}, {y}, {w}, {h})")));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::Geometry(format!("box must have positive extent, got w={w} h={h}")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Tightest box around a set of points. `None` when the points span no area.
    pub fn hull_of(points: impl IntoIterator<Item = Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for p in it {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Self::from_corners(x0, y0, x1, y1).ok()
    }

    pub fn x1(&self) -> f64 {
        self.x + self.w
    }

    pub fn y1(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn top_left(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn bottom_right(&self) -> Point {
        Point::new(self.x1(), self.y1())
    }

    /// Area of the open intersection; touching boxes intersect in zero area.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.x1().min(other.x1()) - self.x.max(other.x);
        let ih = self.y1().min(other.y1()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.x1().max(other.x1());
        let y1 = self.y1().max(other.y1());
        BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x && p.x <= self.x1() && p.y >= self.y && p.y <= self.y1()
    }

    /// Clip to `[0, width] x [0, height]`; `None` when nothing remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.x1().min(width);
        let y1 = self.y1().min(height);
        BBox::from_corners(x0, y0, x1, y1).ok()
    }

    pub fn scale(&self, s: f64) -> BBox {
        BBox { x: self.x * s, y: self.y * s, w: self.w * s, h: self.h * s }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox { x: self.x + dx, y: self.y + dy, ..*self }
    }

    pub fn to_quad(&self) -> Quad {
        Quad {
            points: [
                Point::new(self.x, self.y),
                Point::new(self.x1(), self.y),
                Point::new(self.x1(), self.y1()),
                Point::new(self.x, self.y1()),
            ],
        }
    }
}

/// Quadrilateral with corners clockwise from the top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub points: [Point; 4],
}

impl Quad {
    pub fn new(points: [Point; 4]) -> Result<Self> {
        let q = Quad { points };
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::Geometry("non-finite quad corner".into()));
        }
        if q.signed_area() <= 0.0 {
            return Err(Error::Geometry(format!(
                "quad must wind clockwise with positive area, got {}",
                q.signed_area()
            )));
        }
        if segments_cross(points[0], points[1], points[2], points[3])
            || segments_cross(points[1], points[2], points[3], points[0])
        {
            return Err(Error::Geometry("quad is self-intersecting".into()));
        }
        Ok(q)
    }

    pub fn from_array(v: [f64; 8]) -> Result<Self> {
        Self::new([
            Point::new(v[0], v[1]),
            Point::new(v[2], v[3]),
            Point::new(v[4], v[5]),
            Point::new(v[6], v[7]),
        ])
    }

    pub fn to_array(&self) -> [f64; 8] {
        let p = &self.points;
        [p[0].x, p[0].y, p[1].x, p[1].y, p[2].x, p[2].y, p[3].x, p[3].y]
    }

    /// Shoelace area; positive for clockwise winding in y-down coordinates.
    pub fn signed_area(&self) -> f64 {
        let p = &self.points;
        let mut s = 0.0;
        for i in 0..4 {
            let a = p[i];
            let b = p[(i + 1) % 4];
            s += a.x * b.y - b.x * a.y;
        }
        0.5 * s
    }

    pub fn hull(&self) -> BBox {
        let p = &self.points;
        let x0 = p.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let y0 = p.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let x1 = p.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let y1 = p.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }

    pub fn centroid(&self) -> Point {
        let p = &self.points;
        Point::new(
            p.iter().map(|p| p.x).sum::<f64>() / 4.0,
            p.iter().map(|p| p.y).sum::<f64>() / 4.0,
        )
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Quad {
        Quad { points: self.points.map(f) }
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Proper crossing of segments `ab` and `cd` (shared endpoints do not count).
fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Geometry(format!("score {score} outside [0, 1]")));
        }
        Ok(Self { bbox, score })
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Greedy non-maximum suppression. Returns kept indices in selection order
/// (descending score, ties broken by lower index).
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[j].score.total_cmp(&boxes[i].score).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(&boxes[k].bbox, &boxes[i].bbox) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

/// Relative location/scale of `bj` with respect to `bi`:
/// `(t_x^ij, t_y^ij, t_w^ij, t_h^ij, t_x^ji, t_y^ji)`.
pub fn box_delta(bi: &BBox, bj: &BBox) -> [f64; 6] {
    [
        (bi.x - bj.x) / bi.w,
        (bi.y - bj.y) / bi.h,
        (bi.w / bj.w).ln(),
        (bi.h / bj.h).ln(),
        (bj.x - bi.x) / bj.w,
        (bj.y - bi.y) / bj.h,
    ]
}

/// 18-d spatial compatibility feature of a cell pair: deltas of (i, j),
/// (i, union) and (j, union).
pub fn spatial_compat_feature(bi: &BBox, bj: &BBox) -> [f64; 18] {
    let u = bi.union(bj);
    let mut out = [0.0; 18];
    out[..6].copy_from_slice(&box_delta(bi, bj));
    out[6..12].copy_from_slice(&box_delta(bi, &u));
    out[12..].copy_from_slice(&box_delta(bj, &u));
    out
}


/// Piecewise-linear curve. Row separators are sampled as `y(x)` with
/// increasing `x`; column separators as `x(y)` with increasing `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Point>,
}

impl Polyline {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Geometry("polyline needs at least two points".into()));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::Geometry("non-finite polyline vertex".into()));
        }
        Ok(Self { points })
    }

    /// `y` at `x` for a curve monotone in `x`; constant beyond the ends.
    pub fn y_at(&self, x: f64) -> f64 {
        interp(&self.points, x, |p| p.x, |p| p.y)
    }

    /// `x` at `y` for a curve monotone in `y`; constant beyond the ends.
    pub fn x_at(&self, y: f64) -> f64 {
        interp(&self.points, y, |p| p.y, |p| p.x)
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Polyline {
        Polyline { points: self.points.iter().map(|&p| f(p)).collect() }
    }

    /// Re-sample every `step` units of arc length (end points kept).
    pub fn resample(&self, step: f64) -> Polyline {
        let mut out = vec![self.points[0]];
        for w in self.points.windows(2) {
            let len = w[0].dist(&w[1]);
            let n = (len / step).ceil().max(1.0) as usize;
            for k in 1..=n {
                let t = k as f64 / n as f64;
                out.push(Point::new(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y)));
            }
        }
        Polyline { points: out }
    }
}

fn interp(pts: &[Point], t: f64, key: impl Fn(&Point) -> f64, val: impl Fn(&Point) -> f64) -> f64 {
    let first = &pts[0];
    let last = &pts[pts.len() - 1];
    if t <= key(first) {
        return val(first);
    }
    if t >= key(last) {
        return val(last);
    }
    let i = pts.partition_point(|p| key(p) <= t).max(1);
    let (a, b) = (&pts[i - 1], &pts[i]);
    let span = key(b) - key(a);
    if span <= 0.0 {
        return val(b);
    }
    val(a) + (t - key(a)) / span * (val(b) - val(a))
}

/// Dense row-major 2-D array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "raster data has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.width + c] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.width {
            for r in 0..self.height {
                data.push(self.get(r, c).clone());
            }
        }
        Self { height: self.width, width: self.height, data }
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Raster<U> {
        Raster { height: self.height, width: self.width, data: self.data.iter().map(f).collect() }
    }
}
