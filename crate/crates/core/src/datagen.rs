//! Deterministic synthetic pages with fully annotated tables: ruled and
//! borderless layouts, spanning and empty cells, wide blank columns,
//! paragraph distractors and optional smooth curvature.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{CellAnnotation, DocAnnotation, Span, TableAnnotation, WarpParams};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Point, Polyline};
use crate::splitter::make_separator_gt;

/// Separator polylines are re-sampled at this spacing before warping.
pub const WARP_RESAMPLE_STEP: f64 = 4.0;
const WORD_HEIGHT: (u32, u32) = (5, 7);
const WORD_WIDTH: (u32, u32) = (6, 20);
const WORD_GAP: u32 = 3;
const LINE_PITCH: u32 = 10;
/// Minimum clearance between text and a separator it does not cross.
const TEXT_CLEARANCE: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub page_width: u32,
    pub page_height: u32,
    pub margin: u32,
    pub tables_min: usize,
    pub tables_max: usize,
    pub rows_min: usize,
    pub rows_max: usize,
    pub cols_min: usize,
    pub cols_max: usize,
    pub min_row_pitch: u32,
    pub ruled_prob: f64,
    pub span_prob: f64,
    pub max_span: usize,
    pub empty_prob: f64,
    /// Probability that a column gets extra blank width...
    pub blank_column_prob: f64,
    /// ...multiplying its padding by up to this factor.
    pub blank_column_scale: f64,
    pub paragraph_prob: f64,
    pub curved_prob: f64,
    pub warp_amplitude_max: f64,
    pub warp_wavelength_min: f64,
    pub warp_wavelength_max: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            page_width: 256,
            page_height: 320,
            margin: 10,
            tables_min: 1,
            tables_max: 2,
            rows_min: 2,
            rows_max: 12,
            cols_min: 2,
            cols_max: 8,
            min_row_pitch: 14,
            ruled_prob: 0.5,
            span_prob: 0.08,
            max_span: 3,
            empty_prob: 0.1,
            blank_column_prob: 0.15,
            blank_column_scale: 3.0,
            paragraph_prob: 0.7,
            curved_prob: 0.0,
            warp_amplitude_max: 4.0,
            warp_wavelength_min: 300.0,
            warp_wavelength_max: 600.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Err(Error::Config { key: key.into(), reason });
        if !(2..=12).contains(&self.rows_min) || !(self.rows_min..=12).contains(&self.rows_max) {
            return bad("rows_min", format!("rows must satisfy 2 <= min <= max <= 12, got {}..={}", self.rows_min, self.rows_max));
        }
        if !(2..=8).contains(&self.cols_min) || !(self.cols_min..=8).contains(&self.cols_max) {
            return bad("cols_min", format!("cols must satisfy 2 <= min <= max <= 8, got {}..={}", self.cols_min, self.cols_max));
        }
        if !(1..=3).contains(&self.tables_min) || !(self.tables_min..=3).contains(&self.tables_max) {
            return bad("tables_min", format!("tables must satisfy 1 <= min <= max <= 3, got {}..={}", self.tables_min, self.tables_max));
        }
        if self.max_span == 0 || self.max_span > self.rows_max.max(self.cols_max) {
            return bad("max_span", format!("{} cannot fit any grid of at most {}x{}", self.max_span, self.rows_max, self.cols_max));
        }
        for (key, p) in [
            ("ruled_prob", self.ruled_prob),
            ("span_prob", self.span_prob),
            ("empty_prob", self.empty_prob),
            ("blank_column_prob", self.blank_column_prob),
            ("paragraph_prob", self.paragraph_prob),
            ("curved_prob", self.curved_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(key, format!("probability {p} outside [0, 1]"));
            }
        }
        if self.blank_column_scale < 1.0 {
            return bad("blank_column_scale", "must be >= 1".into());
        }
        if self.min_row_pitch < WORD_HEIGHT.1 + 2 * TEXT_CLEARANCE {
            return bad("min_row_pitch", format!("must be at least {}", WORD_HEIGHT.1 + 2 * TEXT_CLEARANCE));
        }
        if self.warp_wavelength_min <= 0.0 || self.warp_wavelength_max < self.warp_wavelength_min {
            return bad("warp_wavelength_min", "wavelength range is empty".into());
        }
        if self.warp_amplitude_max < 0.0 || self.warp_amplitude_max >= self.warp_wavelength_min / 8.0 {
            return bad("warp_amplitude_max", "amplitude must be below wavelength / 8 to keep separators single-valued".into());
        }
        if (self.margin as f64) < self.warp_amplitude_max + 2.0 {
            return bad("margin", "margin must exceed the warp amplitude by 2 px".into());
        }
        let inner_h = self.page_height.saturating_sub(2 * self.margin);
        let need_h = self.tables_min as u32 * (self.rows_min as u32 * (self.min_row_pitch + 6) + 12);
        if inner_h < need_h {
            return bad("page_height", format!("{inner_h} px of content height cannot hold {} tables", self.tables_min));
        }
        let inner_w = self.page_width.saturating_sub(2 * self.margin);
        if inner_w < self.cols_max as u32 * 20 {
            return bad("page_width", format!("{inner_w} px of content width cannot hold {} columns", self.cols_max));
        }
        Ok(())
    }
}

impl WarpParams {
    pub fn identity() -> Self {
        Self { amp_y: 0.0, wavelength_x: 1.0, phase_x: 0.0, amp_x: 0.0, wavelength_y: 1.0, phase_y: 0.0 }
    }

    pub fn displacement(&self, p: Point) -> (f64, f64) {
        (
            self.amp_x * (TAU * p.y / self.wavelength_y + self.phase_y).sin(),
            self.amp_y * (TAU * p.x / self.wavelength_x + self.phase_x).sin(),
        )
    }

    pub fn forward(&self, p: Point) -> Point {
        let (dx, dy) = self.displacement(p);
        Point::new(p.x + dx, p.y + dy)
    }

    /// Fixed-point inverse `p = q - d(p)`; a contraction while
    /// `amp * 2 pi / wavelength < 1`.
    pub fn inverse(&self, q: Point) -> Point {
        let mut p = q;
        for _ in 0..60 {
            let (dx, dy) = self.displacement(p);
            let next = Point::new(q.x - dx, q.y - dy);
            let done = (next.x - p.x).abs() + (next.y - p.y).abs() < 1e-10;
            p = next;
            if done {
                break;
            }
        }
        p
    }
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32, bg: u8) -> Self {
        Self { img: RgbImage::from_pixel(w, h, Rgb([bg, bg, bg])) }
    }

    fn fill(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, v: u8) {
        for y in y0..y1.min(self.img.height()) {
            for x in x0..x1.min(self.img.width()) {
                self.img.put_pixel(x, y, Rgb([v, v, v]));
            }
        }
    }

    /// A word as a run of glyph-like bars.
    fn word(&mut self, b: &BBox, ink: u8, glyph: u32) {
        let (x0, y0, x1, y1) = (b.x as u32, b.y as u32, b.x1() as u32, b.y1() as u32);
        let mut x = x0;
        while x < x1 {
            let w = (glyph - 1).min(x1 - x);
            self.fill(x, y0, x + w, y1, ink);
            x += glyph;
        }
    }
}

fn ibox(x: u32, y: u32, w: u32, h: u32) -> BBox {
    BBox { x: x as f64, y: y as f64, w: w as f64, h: h as f64 }
}

/// Words filling at most `avail` pixels, as widths.
fn words(rng: &mut ChaCha8Rng, avail: u32, max_words: usize) -> Vec<u32> {
    let n = rng.random_range(1..=max_words);
    let mut out = Vec::new();
    let mut used = 0;
    for _ in 0..n {
        let w = rng.random_range(WORD_WIDTH.0..=WORD_WIDTH.1);
        let extra = if out.is_empty() { w } else { w + WORD_GAP };
        if used + extra > avail {
            break;
        }
        used += extra;
        out.push(w);
    }
    if out.is_empty() {
        out.push(avail.clamp(1, WORD_WIDTH.0));
    }
    out
}

fn paragraph(rng: &mut ChaCha8Rng, x0: u32, x1: u32, y: u32, h: u32) -> Vec<BBox> {
    let mut out = Vec::new();
    let mut x = x0 + rng.random_range(0..8);
    loop {
        let w = rng.random_range(WORD_WIDTH.0..=WORD_WIDTH.1 + 8);
        if x + w > x1 {
            break;
        }
        out.push(ibox(x, y, w, h));
        x += w + WORD_GAP + rng.random_range(0..2);
    }
    out
}

/// Span layout of an `rows x cols` grid.
fn make_spans(rng: &mut ChaCha8Rng, rows: usize, cols: usize, prob: f64, max_span: usize) -> Vec<Span> {
    let mut owner = vec![false; rows * cols];
    let mut spans = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if owner[r * cols + c] {
                continue;
            }
            let (mut rs, mut cs) = (1, 1);
            if prob > 0.0 && rng.random_bool(prob) {
                if rng.random_bool(0.5) {
                    cs = rng.random_range(2..=max_span.max(2));
                } else {
                    rs = rng.random_range(2..=max_span.max(2));
                }
            }
            rs = rs.min(rows - r);
            cs = cs.min(cols - c);
            while cs > 1 && (c..c + cs).any(|cc| owner[r * cols + cc]) {
                cs -= 1;
            }
            if rs == rows && cs == cols {
                rs = 1;
            }
            for rr in r..r + rs {
                for cc in c..c + cs {
                    owner[rr * cols + cc] = true;
                }
            }
            spans.push(Span { start_row: r, end_row: r + rs - 1, start_col: c, end_col: c + cs - 1 });
        }
    }
    spans
}

struct PlacedTable {
    ann: TableAnnotation,
    rulings: Vec<(u32, u32, u32, u32)>,
}

#[allow(clippy::too_many_arguments)]
fn layout_table(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    x_min: u32,
    x_max: u32,
    y0: u32,
    max_height: u32,
) -> Option<PlacedTable> {
    let pitch = rng.random_range(cfg.min_row_pitch..=cfg.min_row_pitch + 6);
    let fit = (max_height / (pitch + 3)) as usize;
    if fit < cfg.rows_min {
        return None;
    }
    let rows = rng.random_range(cfg.rows_min..=cfg.rows_max).min(fit);
    let row_h: Vec<u32> = (0..rows).map(|_| pitch + rng.random_range(0..=3)).collect();

    let avail = x_max - x_min;
    let mut cols = rng.random_range(cfg.cols_min..=cfg.cols_max);
    let mut content: Vec<u32> = (0..cols).map(|_| rng.random_range(10..=36)).collect();
    let mut pads: Vec<u32> = (0..cols)
        .map(|_| {
            let p = rng.random_range(4..=8);
            if cfg.blank_column_prob > 0.0 && rng.random_bool(cfg.blank_column_prob) {
                (p as f64 * rng.random_range(1.0..=cfg.blank_column_scale)) as u32
            } else {
                p
            }
        })
        .collect();
    let total = |content: &[u32], pads: &[u32]| content.iter().zip(pads).map(|(c, p)| c + 2 * p).sum::<u32>();
    while total(&content, &pads) > avail && cols > cfg.cols_min {
        cols -= 1;
        content.pop();
        pads.pop();
    }
    while total(&content, &pads) > avail {
        for (c, p) in content.iter_mut().zip(pads.iter_mut()) {
            *c = (*c * 4 / 5).max(8);
            *p = (*p * 4 / 5).max(4);
        }
        if content.iter().all(|&c| c == 8) && pads.iter().all(|&p| p == 4) {
            break;
        }
    }
    let width = total(&content, &pads);
    if width > avail {
        return None;
    }
    let x0 = x_min + rng.random_range(0..=avail - width);

    let mut col_x = vec![x0];
    for (c, p) in content.iter().zip(&pads) {
        col_x.push(col_x.last().unwrap() + c + 2 * p);
    }
    let mut row_y = vec![y0];
    for h in &row_h {
        row_y.push(row_y.last().unwrap() + h);
    }
    let spans = make_spans(rng, rows, cols, cfg.span_prob, cfg.max_span);

    let th = rng.random_range(WORD_HEIGHT.0..=WORD_HEIGHT.1);
    let align: Vec<u8> = (0..cols).map(|_| rng.random_range(0..3)).collect();
    let mut cells = Vec::with_capacity(spans.len());
    for s in &spans {
        let mut text = Vec::new();
        let empty = cfg.empty_prob > 0.0 && rng.random_bool(cfg.empty_prob);
        if !empty {
            let left = col_x[s.start_col] + pads[s.start_col].max(TEXT_CLEARANCE + 1);
            let right = col_x[s.end_col + 1] - pads[s.end_col].max(TEXT_CLEARANCE + 1);
            let top = row_y[s.start_row];
            let bottom = row_y[s.end_row + 1];
            let slack = (bottom - top - th) / 2;
            let jitter = slack.saturating_sub(TEXT_CLEARANCE).min(2);
            let ty = top + slack - jitter + rng.random_range(0..=2 * jitter);
            let ws = words(rng, right - left, 3);
            let used: u32 = ws.iter().sum::<u32>() + WORD_GAP * (ws.len() as u32 - 1);
            let mut x = match align[s.start_col] {
                0 => left,
                1 => left + (right - left - used.min(right - left)) / 2,
                _ => right - used.min(right - left),
            };
            for w in ws {
                let w = w.min(right.saturating_sub(x)).max(1);
                text.push(ibox(x, ty, w, th));
                x += w + WORD_GAP;
            }
        }
        cells.push(CellAnnotation { span: *s, text_boxes: text });
    }

    let (x1, y1) = (*col_x.last().unwrap(), *row_y.last().unwrap());
    let hline = |y: u32| Polyline { points: vec![Point::new(x0 as f64, y as f64), Point::new(x1 as f64, y as f64)] };
    let vline = |x: u32| Polyline { points: vec![Point::new(x as f64, y0 as f64), Point::new(x as f64, y1 as f64)] };
    let ruled = rng.random_bool(cfg.ruled_prob);
    let mut rulings = Vec::new();
    if ruled {
        for (k, &y) in row_y.iter().enumerate() {
            for c in 0..cols {
                if !spans.iter().any(|s| s.crosses_row_line(k) && (s.start_col..=s.end_col).contains(&c)) {
                    rulings.push((col_x[c], y, col_x[c + 1] + 1, y + 1));
                }
            }
        }
        for (k, &x) in col_x.iter().enumerate() {
            for r in 0..rows {
                if !spans.iter().any(|s| s.crosses_col_line(k) && (s.start_row..=s.end_row).contains(&r)) {
                    rulings.push((x, row_y[r], x + 1, row_y[r + 1] + 1));
                }
            }
        }
    } else if rng.random_bool(0.5) {
        rulings.push((x0, y0, x1 + 1, y0 + 1));
        rulings.push((x0, y1, x1 + 1, y1 + 1));
        if rows > 2 {
            rulings.push((x0, row_y[1], x1 + 1, row_y[1] + 1));
        }
    }
    let ann = TableAnnotation {
        quad: ibox(x0, y0, x1 - x0, y1 - y0).to_quad(),
        rows,
        cols,
        row_separators: row_y.iter().map(|&y| hline(y)).collect(),
        col_separators: col_x.iter().map(|&x| vline(x)).collect(),
        cells,
        ruled,
        warp: None,
    };
    Some(PlacedTable { ann, rulings })
}

/// Render one page. Identical `(config, seed)` give identical output.
pub fn synthesize_page(cfg: &SynthConfig, seed: u64) -> Result<(RgbImage, DocAnnotation)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pw, ph, m) = (cfg.page_width, cfg.page_height, cfg.margin);
    let n_tables = rng.random_range(cfg.tables_min..=cfg.tables_max);
    let min_table = cfg.rows_min as u32 * (cfg.min_row_pitch + 6) + 12;

    let mut tables = Vec::new();
    let mut distractors = Vec::new();
    let mut rulings = Vec::new();
    let mut y = m;
    for t in 0..n_tables {
        let reserve = (n_tables - t - 1) as u32 * min_table;
        if cfg.paragraph_prob > 0.0 && rng.random_bool(cfg.paragraph_prob) {
            let lines = rng.random_range(1..=3u32);
            let room = (ph - m).saturating_sub(y + reserve + min_table);
            let lines = lines.min(room / LINE_PITCH);
            for _ in 0..lines {
                let h = rng.random_range(WORD_HEIGHT.0..=WORD_HEIGHT.1);
                distractors.extend(paragraph(&mut rng, m, pw - m, y, h));
                y += LINE_PITCH;
            }
            if lines > 0 {
                y += 6;
            }
        }
        let budget = (ph - m).saturating_sub(y + reserve);
        let max_h = if t + 1 == n_tables { budget } else { budget.min(budget * 2 / 3).max(min_table) };
        match layout_table(&mut rng, cfg, m, pw - m, y, max_h) {
            Some(p) => {
                y = p.ann.bbox().y1() as u32 + 8;
                rulings.extend(p.rulings);
                tables.push(p.ann);
            }
            None => break,
        }
    }
    if tables.is_empty() {
        return Err(Error::Config { key: "page_height".into(), reason: "no table fits on the page".into() });
    }
    if cfg.paragraph_prob > 0.0 && rng.random_bool(cfg.paragraph_prob) {
        while y + LINE_PITCH < ph - m {
            let h = rng.random_range(WORD_HEIGHT.0..=WORD_HEIGHT.1);
            distractors.extend(paragraph(&mut rng, m, pw - m, y, h));
            y += LINE_PITCH;
            if rng.random_bool(0.3) {
                break;
            }
        }
    }

    let bg = rng.random_range(240..=255u8);
    let ink = rng.random_range(10..=80u8);
    let rule_ink = rng.random_range(60..=140u8);
    let glyph = rng.random_range(3..=5u32);
    let mut canvas = Canvas::new(pw, ph, bg);
    for &(x0, y0, x1, y1) in &rulings {
        canvas.fill(x0, y0, x1, y1, rule_ink);
    }
    for t in &tables {
        for (_, b) in t.text_boxes() {
            canvas.word(b, ink, glyph);
        }
    }
    for b in &distractors {
        canvas.word(b, ink, glyph);
    }
    let doc = DocAnnotation { width: pw, height: ph, tables, distractors };
    let curved = cfg.curved_prob > 0.0 && cfg.warp_amplitude_max > 0.0 && rng.random_bool(cfg.curved_prob);
    if curved {
        let amp = rng.random_range(0.5 * cfg.warp_amplitude_max..=cfg.warp_amplitude_max);
        let params = WarpParams {
            amp_y: amp,
            wavelength_x: rng.random_range(cfg.warp_wavelength_min..=cfg.warp_wavelength_max),
            phase_x: rng.random_range(0.0..TAU),
            amp_x: rng.random_range(0.0..=0.5 * amp),
            wavelength_y: rng.random_range(cfg.warp_wavelength_min..=cfg.warp_wavelength_max),
            phase_y: rng.random_range(0.0..TAU),
        };
        return warp_curved(&canvas.img, &doc, params);
    }
    Ok((canvas.img, doc))
}

pub(crate) fn bilinear(img: &RgbImage, x: f64, y: f64, fill: Rgb<u8>) -> Rgb<u8> {
    // pixel centers sit at integer + 0.5
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (ax, ay) = (fx - x0, fy - y0);
    let get = |xi: f64, yi: f64| {
        if xi < 0.0 || yi < 0.0 || xi >= img.width() as f64 || yi >= img.height() as f64 {
            fill
        } else {
            *img.get_pixel(xi as u32, yi as u32)
        }
    };
    let (p00, p10, p01, p11) = (get(x0, y0), get(x0 + 1.0, y0), get(x0, y0 + 1.0), get(x0 + 1.0, y0 + 1.0));
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = (1.0 - ay) * ((1.0 - ax) * p00[c] as f64 + ax * p10[c] as f64)
            + ay * ((1.0 - ax) * p01[c] as f64 + ax * p11[c] as f64);
        out[c] = v.round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Hull of a box after warping, from points sampled along its boundary.
fn warp_box(b: &BBox, w: &WarpParams) -> Result<BBox> {
    let n = 4;
    let mut pts = Vec::with_capacity(4 * n);
    for k in 0..=n {
        let t = k as f64 / n as f64;
        pts.push(Point::new(b.x + t * b.w, b.y));
        pts.push(Point::new(b.x + t * b.w, b.y1()));
        pts.push(Point::new(b.x, b.y + t * b.h));
        pts.push(Point::new(b.x1(), b.y + t * b.h));
    }
    BBox::hull_of(pts.into_iter().map(|p| w.forward(p))).ok_or_else(|| Error::Geometry("empty box".into()))
}

fn warp_table(t: &TableAnnotation, w: &WarpParams) -> Result<TableAnnotation> {
    let map_line = |l: &Polyline| l.resample(WARP_RESAMPLE_STEP).map(|p| w.forward(p));
    let row_separators: Vec<Polyline> = t.row_separators.iter().map(map_line).collect();
    let col_separators: Vec<Polyline> = t.col_separators.iter().map(map_line).collect();
    let hull = BBox::hull_of(row_separators.iter().chain(&col_separators).flat_map(|l| l.points.iter().copied()))
        .ok_or_else(|| Error::Geometry("table without separators".into()))?;
    Ok(TableAnnotation {
        quad: hull.to_quad(),
        rows: t.rows,
        cols: t.cols,
        row_separators,
        col_separators,
        cells: t
            .cells
            .iter()
            .map(|c| {
                Ok(CellAnnotation { span: c.span, text_boxes: c.text_boxes.iter().map(|b| warp_box(b, w)).collect::<Result<_>>()? })
            })
            .collect::<Result<_>>()?,
        ruled: t.ruled,
        warp: Some(*w),
    })
}

/// Apply a smooth sinusoidal displacement to an image and every piece of
/// its annotation.
pub fn warp_curved(img: &RgbImage, doc: &DocAnnotation, params: WarpParams) -> Result<(RgbImage, DocAnnotation)> {
    let fill = *img.get_pixel(0, 0);
    let out = RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let p = params.inverse(Point::new(x as f64 + 0.5, y as f64 + 0.5));
        bilinear(img, p.x, p.y, fill)
    });
    let doc = DocAnnotation {
        width: doc.width,
        height: doc.height,
        tables: doc.tables.iter().map(|t| warp_table(t, &params)).collect::<Result<_>>()?,
        distractors: doc.distractors.iter().map(|b| warp_box(b, &params)).collect::<Result<_>>()?,
    };
    Ok((out, doc))
}

/// Full check of a generated page: annotation invariants plus a valid
/// separator ground truth for every table.
pub fn validate_page(doc: &DocAnnotation) -> Result<()> {
    doc.validate()?;
    for (i, t) in doc.tables.iter().enumerate() {
        let b = t.bbox();
        let local = t.transform(|p| Point::new(p.x - b.x, p.y - b.y))?;
        make_separator_gt(&local, b.w.ceil() as usize, b.h.ceil() as usize)
            .map_err(|e| Error::Annotation(format!("table {i}: {e}")))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config: SynthConfig,
    pub first_seed: u64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub id: String,
    pub image_path: PathBuf,
    pub annotation: DocAnnotation,
}

impl CorpusItem {
    pub fn load_image(&self) -> Result<RgbImage> {
        Ok(image::open(&self.image_path)?.to_rgb8())
    }
}

pub fn item_id(index: usize) -> String {
    format!("{index:04}")
}

/// Generate `count` pages with seeds `first_seed..` into `dir`.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig, first_seed: u64, count: usize) -> Result<CorpusManifest> {
    cfg.validate()?;
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("annotations"))?;
    (0..count).into_par_iter().try_for_each(|i| -> Result<()> {
        let (img, doc) = synthesize_page(cfg, first_seed + i as u64)?;
        let id = item_id(i);
        img.save(dir.join("images").join(format!("{id}.png")))?;
        fs::write(dir.join("annotations").join(format!("{id}.json")), serde_json::to_vec_pretty(&doc)?)?;
        Ok(())
    })?;
    let manifest = CorpusManifest { config: cfg.clone(), first_seed, count };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Annotated items of a corpus directory, in id order.
pub fn read_corpus(dir: &Path) -> Result<Vec<CorpusItem>> {
    let ann_dir = dir.join("annotations");
    let mut names: Vec<PathBuf> = fs::read_dir(&ann_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    names.retain(|p| p.extension().is_some_and(|e| e == "json"));
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidInput(format!("no annotations found in {}", ann_dir.display())));
    }
    names
        .into_iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let annotation: DocAnnotation = serde_json::from_slice(&fs::read(&p)?)?;
            let image_path = dir.join("images").join(format!("{id}.png"));
            if !image_path.exists() {
                return Err(Error::InvalidInput(format!("missing image {}", image_path.display())));
            }
            Ok(CorpusItem { id, image_path, annotation })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let cfg = SynthConfig { curved_prob: 0.5, ..SynthConfig::default() };
        let (a, da) = synthesize_page(&cfg, 7).unwrap();
        let (b, db) = synthesize_page(&cfg, 7).unwrap();
        assert_eq!(a.as_raw(), b.as_raw());
        assert_eq!(da, db);
    }

    #[test]
    fn no_span_probability_gives_unit_cells() {
        let cfg = SynthConfig { span_prob: 0.0, ..SynthConfig::default() };
        for seed in 0..10 {
            let (_, d) = synthesize_page(&cfg, seed).unwrap();
            assert!(d.tables.iter().flat_map(|t| &t.cells).all(|c| c.span.rowspan() == 1 && c.span.colspan() == 1));
        }
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let w = WarpParams::identity();
        let p = Point::new(12.5, 40.25);
        assert_eq!(w.forward(p), p);
    }

    #[test]
    fn warp_inverts() {
        let w = WarpParams { amp_y: 4.0, wavelength_x: 300.0, phase_x: 1.0, amp_x: 2.0, wavelength_y: 350.0, phase_y: 0.3 };
        for k in 0..50 {
            let p = Point::new(5.0 * k as f64, 3.0 * k as f64 + 1.0);
            let q = w.inverse(w.forward(p));
            assert!(p.dist(&q) < 0.5);
        }
    }

    #[test]
    fn infeasible_config_rejected() {
        let cfg = SynthConfig { max_span: 13, ..SynthConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        let cfg = SynthConfig { rows_max: 13, ..SynthConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn generated_pages_validate() {
        let cfg = SynthConfig { curved_prob: 0.5, span_prob: 0.2, ..SynthConfig::default() };
        for seed in 0..40 {
            let (_, d) = synthesize_page(&cfg, seed).unwrap();
            validate_page(&d).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        }
    }
}
