//! Page-level orchestration: detect tables, crop and rescale each one,
//! recognize its structure, map it back to page coordinates, attach
//! content boxes and serialize.

use image::imageops::{self, FilterType};
use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{DocAnnotation, Span, TableAnnotation};
use crate::detector::{Detection, TableDetector};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Point, Quad, ScoredBox};
use crate::merger::TableStructure;
use crate::metrics::{
    adjacency_counts, detection_matches, teds_struct, wavg_f1, ContentTable, EvalReport, ImageScore, MatchCounts,
    StructTree, ThresholdScore, WAVG_THRESHOLDS,
};
use crate::recognizer::TableRecognizer;

/// Fraction of a content box that must fall inside a cell to assign it.
pub const CONTENT_MIN_OVERLAP: f64 = 0.8;
/// Predicted and annotated tables are paired for structure scoring above
/// this IoU.
pub const TABLE_MATCH_IOU: f64 = 0.5;

/// Page-to-crop mapping `p -> ((p.x - x0) * sx, (p.y - y0) * sy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub x0: f64,
    pub y0: f64,
    pub sx: f64,
    pub sy: f64,
}

impl CropTransform {
    pub fn forward(&self, p: Point) -> Point {
        Point::new((p.x - self.x0) * self.sx, (p.y - self.y0) * self.sy)
    }

    pub fn inverse(&self, p: Point) -> Point {
        Point::new(p.x / self.sx + self.x0, p.y / self.sy + self.y0)
    }
}

/// Integer pixel window covering `region`, clipped to the image.
fn pixel_window(region: &BBox, width: u32, height: u32) -> Result<(u32, u32, u32, u32)> {
    let x0 = region.x.floor().clamp(0.0, width as f64) as u32;
    let y0 = region.y.floor().clamp(0.0, height as f64) as u32;
    let x1 = region.x1().ceil().clamp(0.0, width as f64) as u32;
    let y1 = region.y1().ceil().clamp(0.0, height as f64) as u32;
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::InvalidInput(format!("region {region:?} does not overlap the image")));
    }
    Ok((x0, y0, x1 - x0, y1 - y0))
}

/// Crop the axis-aligned hull of `region` and rescale it so its longer side
/// equals `long_side`.
pub fn crop_and_resize(image: &RgbImage, region: &BBox, long_side: usize) -> Result<(RgbImage, CropTransform)> {
    let (x0, y0, w, h) = pixel_window(region, image.width(), image.height())?;
    let s = long_side as f64 / w.max(h) as f64;
    let nw = ((w as f64 * s).round() as u32).max(1);
    let nh = ((h as f64 * s).round() as u32).max(1);
    let crop = imageops::crop_imm(image, x0, y0, w, h).to_image();
    let crop = if (nw, nh) == (w, h) { crop } else { imageops::resize(&crop, nw, nh, FilterType::Triangle) };
    let t = CropTransform { x0: x0 as f64, y0: y0 as f64, sx: nw as f64 / w as f64, sy: nh as f64 / h as f64 };
    Ok((crop, t))
}

/// Ground-truth table and its image, expressed in the crop frame.
pub fn crop_table(image: &RgbImage, table: &TableAnnotation, long_side: usize) -> Result<(RgbImage, TableAnnotation, CropTransform)> {
    let (crop, t) = crop_and_resize(image, &table.bbox(), long_side)?;
    let local = table.transform(|p| t.forward(p))?;
    Ok((crop, local, t))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContentAssignment {
    /// Content ids per structure cell, ascending.
    pub cells: Vec<Vec<usize>>,
    pub unassigned: Vec<usize>,
}

/// Assign each content box to the cell holding at least 80% of its area
/// (the cell with the largest share if several do).
pub fn assign_content(boxes: &[BBox], structure: &TableStructure) -> ContentAssignment {
    let hulls: Vec<BBox> = structure.cells.iter().map(|c| c.quad.hull()).collect();
    let mut out = ContentAssignment { cells: vec![Vec::new(); hulls.len()], unassigned: Vec::new() };
    for (i, b) in boxes.iter().enumerate() {
        let area = b.area();
        let best = hulls
            .iter()
            .enumerate()
            .map(|(j, h)| (j, if area > 0.0 { h.intersection_area(b) / area } else { 0.0 }))
            .filter(|&(_, r)| r >= CONTENT_MIN_OVERLAP)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((j, _)) => out.cells[j].push(i),
            None => out.unassigned.push(i),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub start_row: usize,
    pub end_row: usize,
    pub start_col: usize,
    pub end_col: usize,
    pub quad: [f64; 8],
    pub content_ids: Vec<usize>,
}

impl CellResult {
    pub fn span(&self) -> Span {
        Span { start_row: self.start_row, end_row: self.end_row, start_col: self.start_col, end_col: self.end_col }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableResult {
    pub quad: [f64; 8],
    pub score: f64,
    pub grid: GridDims,
    pub cells: Vec<CellResult>,
}

impl TableResult {
    pub fn spans(&self) -> Vec<Span> {
        self.cells.iter().map(CellResult::span).collect()
    }

    pub fn bbox(&self) -> Result<BBox> {
        Ok(Quad::from_array(self.quad)?.hull())
    }

    pub fn content_table(&self) -> ContentTable {
        ContentTable {
            rows: self.grid.rows,
            cols: self.grid.cols,
            spans: self.spans(),
            content: self.cells.iter().map(|c| c.content_ids.clone()).collect(),
        }
    }
}

/// Everything recognized on one page, in page pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageResult {
    pub image: String,
    pub tables: Vec<TableResult>,
}

pub fn to_json(page: &PageResult) -> Result<String> {
    Ok(serde_json::to_string_pretty(page)?)
}

pub fn from_json(text: &str) -> Result<PageResult> {
    Ok(serde_json::from_str(text)?)
}

/// `<table>` markup with one `<tr>` per grid row and `rowspan`/`colspan`
/// attributes on spanning cells.
pub fn to_html(spans: &[Span], rows: usize) -> String {
    let mut s = String::from("<table>");
    for r in 0..rows {
        s.push_str("<tr>");
        let mut cells: Vec<&Span> = spans.iter().filter(|c| c.start_row == r).collect();
        cells.sort_by_key(|c| c.start_col);
        for c in cells {
            s.push_str("<td");
            if c.rowspan() > 1 {
                s.push_str(&format!(" rowspan=\"{}\"", c.rowspan()));
            }
            if c.colspan() > 1 {
                s.push_str(&format!(" colspan=\"{}\"", c.colspan()));
            }
            s.push_str("></td>");
        }
        s.push_str("</tr>");
    }
    s.push_str("</table>");
    s
}

fn clamp_point(p: Point, w: f64, h: f64) -> Point {
    Point::new(p.x.clamp(0.0, w), p.y.clamp(0.0, h))
}

fn clamped_quad(q: &Quad, w: f64, h: f64) -> [f64; 8] {
    let pts = q.points.map(|p| clamp_point(p, w, h));
    [pts[0].x, pts[0].y, pts[1].x, pts[1].y, pts[2].x, pts[2].y, pts[3].x, pts[3].y]
}

/// Build the serialized table from a page-coordinate structure.
pub fn table_result(det: &Detection, structure: &TableStructure, content: &[BBox], w: f64, h: f64) -> TableResult {
    let assignment = assign_content(content, structure);
    TableResult {
        quad: clamped_quad(&det.quad, w, h),
        score: det.score,
        grid: GridDims { rows: structure.rows, cols: structure.cols },
        cells: structure
            .cells
            .iter()
            .zip(assignment.cells)
            .map(|(c, ids)| CellResult {
                start_row: c.span.start_row,
                end_row: c.span.end_row,
                start_col: c.span.start_col,
                end_col: c.span.end_col,
                quad: clamped_quad(&c.quad, w, h),
                content_ids: ids,
            })
            .collect(),
    }
}

/// Detector plus structure recognizer.
pub struct Pipeline {
    pub detector: TableDetector,
    pub recognizer: TableRecognizer,
}

impl Pipeline {
    /// Structure of one detected table, mapped back to page coordinates.
    pub fn recognize_detection(&self, page: &RgbImage, det: &Detection) -> Result<(TableStructure, Vec<String>)> {
        let (crop, t) = crop_and_resize(page, &det.quad.hull(), self.recognizer.config().long_side)?;
        let rec = self.recognizer.recognize_structure(&crop)?;
        Ok((rec.structure.map(|p| t.inverse(p)), rec.diagnostics))
    }

    /// Full page: `content` are the page's text boxes (ids are their indices).
    pub fn process_page(&self, id: &str, page: &RgbImage, content: &[BBox]) -> Result<PageResult> {
        let (w, h) = (page.width() as f64, page.height() as f64);
        let dets = self.detector.detect_tables(page)?;
        let mut tables = Vec::with_capacity(dets.len());
        for det in &dets {
            let (structure, diags) = self.recognize_detection(page, det)?;
            for d in diags {
                log::debug!("{id}: {d}");
            }
            tables.push(table_result(det, &structure, content, w, h));
        }
        Ok(PageResult { image: id.to_string(), tables })
    }

    /// Process pages on a pool of `workers` threads; results keep input order.
    pub fn process_pages(&self, pages: &[(String, RgbImage, Vec<BBox>)], workers: usize) -> Result<Vec<PageResult>>
    where
        Self: Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
        pool.install(|| pages.par_iter().map(|(id, img, content)| self.process_page(id, img, content)).collect())
    }
}

/// All text boxes of a page in content-id order: table text (table by
/// table, cell by cell) followed by distractors.
pub fn content_boxes(doc: &DocAnnotation) -> Vec<BBox> {
    doc.tables
        .iter()
        .flat_map(|t| t.text_boxes().map(|(_, b)| *b))
        .chain(doc.distractors.iter().copied())
        .collect()
}

/// Ground-truth tables as content tables over [`content_boxes`] ids.
pub fn gt_content_tables(doc: &DocAnnotation) -> Vec<ContentTable> {
    let mut next = 0;
    doc.tables
        .iter()
        .map(|t| ContentTable {
            rows: t.rows,
            cols: t.cols,
            spans: t.spans(),
            content: t
                .cells
                .iter()
                .map(|c| {
                    let ids: Vec<usize> = (next..next + c.text_boxes.len()).collect();
                    next += c.text_boxes.len();
                    ids
                })
                .collect(),
        })
        .collect()
}

/// Adjacency F1 and TEDS-Struct of one predicted table against one
/// annotated table, both carrying content ids of the same id space.
pub fn structure_scores(pred: &ContentTable, gt: &ContentTable) -> (f64, f64) {
    let adj = adjacency_counts(pred, gt).prf().f1;
    let teds = teds_struct(&StructTree::from_spans(pred.rows, &pred.spans), &StructTree::from_spans(gt.rows, &gt.spans));
    (adj, teds)
}

/// Score page results against their annotations. Every annotated table
/// contributes one adjacency F1 and one TEDS value: those of the
/// best-overlapping prediction, or 0 when none overlaps enough.
pub fn evaluate(results: &[PageResult], docs: &[DocAnnotation]) -> Result<EvalReport> {
    if results.len() != docs.len() {
        return Err(Error::InvalidInput(format!("{} results for {} annotations", results.len(), docs.len())));
    }
    let mut totals = [MatchCounts::default(); 4];
    let mut images = Vec::with_capacity(docs.len());
    let (mut adj_all, mut teds_all) = (Vec::new(), Vec::new());
    for (res, doc) in results.iter().zip(docs) {
        let preds: Vec<ScoredBox> =
            res.tables.iter().map(|t| Ok(ScoredBox { bbox: t.bbox()?, score: t.score })).collect::<Result<_>>()?;
        let gts = doc.table_boxes();
        let mut detection = Vec::new();
        for (k, &thr) in WAVG_THRESHOLDS.iter().enumerate() {
            let m = detection_matches(&preds, &gts, thr);
            totals[k].add(m);
            let p = m.prf();
            detection.push(ThresholdScore { iou: thr, precision: p.precision, recall: p.recall, f1: p.f1 });
        }
        let gt_tables = gt_content_tables(doc);
        let (mut adj, mut teds) = (Vec::new(), Vec::new());
        for (g, gt) in gts.iter().zip(&gt_tables) {
            let best = preds
                .iter()
                .enumerate()
                .map(|(i, p)| (i, iou(&p.bbox, g)))
                .filter(|&(_, v)| v >= TABLE_MATCH_IOU)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            let (a, t) = match best {
                Some((i, _)) => structure_scores(&res.tables[i].content_table(), gt),
                None => (0.0, 0.0),
            };
            adj.push(a);
            teds.push(t);
        }
        adj_all.extend(&adj);
        teds_all.extend(&teds);
        images.push(ImageScore { image: res.image.clone(), detection, adjacency_f1: adj, teds_struct: teds });
    }
    let detection: Vec<ThresholdScore> = WAVG_THRESHOLDS
        .iter()
        .zip(&totals)
        .map(|(&iou, m)| {
            let p = m.prf();
            ThresholdScore { iou, precision: p.precision, recall: p.recall, f1: p.f1 }
        })
        .collect();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(EvalReport {
        wavg_f1: wavg_f1(&detection.iter().map(|d| (d.iou, d.f1)).collect::<Vec<_>>()),
        detection,
        mean_adjacency_f1: mean(&adj_all),
        mean_teds_struct: mean(&teds_all),
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_scales() {
        let img = RgbImage::new(900, 700);
        let (c, t) = crop_and_resize(&img, &BBox { x: 50.0, y: 50.0, w: 800.0, h: 600.0 }, 1024).unwrap();
        assert_eq!(c.dimensions(), (1024, 768));
        assert!((t.sx - 1.28).abs() < 1e-12);
        let p = Point::new(850.0, 650.0);
        assert!(t.inverse(t.forward(p)).dist(&p) < 0.5);
    }

    #[test]
    fn html_examples() {
        assert_eq!(to_html(&[Span::unit(0, 0)], 1), "<table><tr><td></td></tr></table>");
        let spans = [Span { start_row: 0, end_row: 0, start_col: 0, end_col: 1 }, Span::unit(1, 0), Span::unit(1, 1)];
        assert!(to_html(&spans, 2).starts_with("<table><tr><td colspan=\"2\"></td></tr>"));
    }

    #[test]
    fn content_threshold() {
        let s = TableStructure {
            rows: 1,
            cols: 2,
            cells: vec![
                crate::merger::StructureCell { span: Span::unit(0, 0), quad: BBox { x: 0.0, y: 0.0, w: 10.0, h: 10.0 }.to_quad() },
                crate::merger::StructureCell { span: Span::unit(0, 1), quad: BBox { x: 10.0, y: 0.0, w: 10.0, h: 10.0 }.to_quad() },
            ],
        };
        let boxes = [
            BBox { x: 2.0, y: 2.0, w: 4.0, h: 4.0 },
            BBox { x: 8.0, y: 2.0, w: 4.0, h: 4.0 },
            BBox { x: 11.5, y: 2.0, w: 10.0, h: 4.0 },
        ];
        let a = assign_content(&boxes, &s);
        assert_eq!(a.cells, vec![vec![0], vec![2]]);
        assert_eq!(a.unassigned, vec![1]);
    }
}
