//! Independent reference implementations and fixtures shared by the
//! integration tests.
#![allow(dead_code)]

pub mod grad;
pub mod suites;

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use tabstruct::annotation::Span;
use tabstruct::detector::CornerPoint;
use tabstruct::geometry::{iou, BBox, Point, Quad, ScoredBox};
use tabstruct::grid_assembler::CellGrid;
use tabstruct::metrics::{AdjacencyRelation, Direction, NodeLabel, StructTree};
use tabstruct::nn::ops::CornerKind;

/// A uniform `rows x cols` grid of `cell`-pixel cells starting at `origin`.
pub fn uniform_grid(rows: usize, cols: usize, origin: f64, cell: f64) -> CellGrid {
    let points: Vec<Point> = (0..=rows)
        .flat_map(|r| (0..=cols).map(move |c| Point::new(origin + c as f64 * cell, origin + r as f64 * cell)))
        .collect();
    let cells: Vec<Quad> = (0..rows)
        .flat_map(|r| {
            (0..cols).map(move |c| {
                BBox { x: origin + c as f64 * cell + 1.0, y: origin + r as f64 * cell + 1.0, w: cell - 2.0, h: cell - 2.0 }
                    .to_quad()
            })
        })
        .collect();
    CellGrid { rows, cols, cells, points, row_lines: Vec::new(), col_lines: Vec::new() }
}

/// Random partition of a grid into rectangles, in row-major order of their
/// top-left cell.
pub fn random_partition(rng: &mut impl Rng, rows: usize, cols: usize, merge_prob: f64) -> Vec<Span> {
    let mut owned = vec![false; rows * cols];
    let mut spans = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if owned[r * cols + c] {
                continue;
            }
            let mut end_col = c;
            while end_col + 1 < cols && !owned[r * cols + end_col + 1] && rng.random_bool(merge_prob) {
                end_col += 1;
            }
            let mut end_row = r;
            while end_row + 1 < rows && rng.random_bool(merge_prob) {
                end_row += 1;
            }
            for rr in r..=end_row {
                for cc in c..=end_col {
                    owned[rr * cols + cc] = true;
                }
            }
            spans.push(Span { start_row: r, end_row, start_col: c, end_col });
        }
    }
    spans
}

/// NMS by its definition: a box survives iff no surviving box ranked
/// before it overlaps it by more than the threshold. Evaluated with the
/// full pairwise IoU matrix and a memoized recursion over ranks.
pub fn nms_pairwise(boxes: &[ScoredBox], thr: f64) -> Vec<usize> {
    let n = boxes.len();
    let m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| iou(&boxes[i].bbox, &boxes[j].bbox)).collect()).collect();
    let before = |a: usize, b: usize| boxes[a].score > boxes[b].score || (boxes[a].score == boxes[b].score && a < b);
    fn survives(i: usize, n: usize, m: &[Vec<f64>], thr: f64, before: &dyn Fn(usize, usize) -> bool, memo: &mut HashMap<usize, bool>) -> bool {
        if let Some(&v) = memo.get(&i) {
            return v;
        }
        let v = !(0..n).any(|j| j != i && before(j, i) && m[i][j] > thr && survives(j, n, m, thr, before, memo));
        memo.insert(i, v);
        v
    }
    let mut memo = HashMap::new();
    let mut kept: Vec<usize> = (0..n).filter(|&i| survives(i, n, &m, thr, &before, &mut memo)).collect();
    kept.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    kept
}

/// Adjacency relations by checking every ordered pair of non-empty cells:
/// `b` is the right neighbour of `a` on some shared row when every grid
/// position strictly between them on that row belongs to an empty cell.
pub fn adjacency_brute(spans: &[Span], rows: usize, cols: usize, nonempty: &[bool]) -> BTreeSet<AdjacencyRelation> {
    let owner = |r: usize, c: usize| spans.iter().position(|s| s.contains(r, c));
    let empty_at = |r: usize, c: usize| owner(r, c).map_or(true, |o| !nonempty[o]);
    let mut out = BTreeSet::new();
    for (i, a) in spans.iter().enumerate() {
        for (j, b) in spans.iter().enumerate() {
            if i == j || !nonempty[i] || !nonempty[j] {
                continue;
            }
            let h = b.start_col > a.end_col
                && (0..rows).any(|r| {
                    a.contains(r, a.start_col) && b.contains(r, b.start_col) && (a.end_col + 1..b.start_col).all(|c| empty_at(r, c))
                });
            if h {
                out.insert(AdjacencyRelation { from: i, to: j, direction: Direction::Horizontal });
            }
            let v = b.start_row > a.end_row
                && (0..cols).any(|c| {
                    a.contains(a.start_row, c) && b.contains(b.start_row, c) && (a.end_row + 1..b.start_row).all(|r| empty_at(r, c))
                });
            if v {
                out.insert(AdjacencyRelation { from: i, to: j, direction: Direction::Vertical });
            }
        }
    }
    out
}

/// Ordered forest edit distance by the textbook recursion on rightmost
/// roots, memoized on the forests themselves.
pub fn ted_memo(a: &StructTree, b: &StructTree) -> usize {
    type Forest = Vec<StructTree>;
    fn size(f: &[StructTree]) -> usize {
        f.iter().map(StructTree::size).sum()
    }
    fn go(f: &Forest, g: &Forest, memo: &mut HashMap<(Forest, Forest), usize>) -> usize {
        if f.is_empty() {
            return size(g);
        }
        if g.is_empty() {
            return size(f);
        }
        let key = (f.clone(), g.clone());
        if let Some(&d) = memo.get(&key) {
            return d;
        }
        let v = f.last().unwrap();
        let w = g.last().unwrap();
        let mut f_minus_v = f[..f.len() - 1].to_vec();
        f_minus_v.extend(v.children.iter().cloned());
        let mut g_minus_w = g[..g.len() - 1].to_vec();
        g_minus_w.extend(w.children.iter().cloned());
        let d = (go(&f_minus_v, g, memo) + 1)
            .min(go(f, &g_minus_w, memo) + 1)
            .min(
                go(&v.children, &w.children, memo)
                    + go(&f[..f.len() - 1].to_vec(), &g[..g.len() - 1].to_vec(), memo)
                    + usize::from(v.label != w.label),
            );
        memo.insert(key, d);
        d
    }
    go(&vec![a.clone()], &vec![b.clone()], &mut HashMap::new())
}

/// Random tree with at most `max_size` nodes and labels from a small set.
pub fn random_tree(rng: &mut impl Rng, max_size: usize) -> StructTree {
    let labels = [
        NodeLabel::Table,
        NodeLabel::Row,
        NodeLabel::Cell { rowspan: 1, colspan: 1 },
        NodeLabel::Cell { rowspan: 2, colspan: 1 },
        NodeLabel::Cell { rowspan: 1, colspan: 3 },
    ];
    let n = rng.random_range(1..=max_size);
    // parent[i] < i gives a random rooted tree; children keep index order
    let parents: Vec<usize> = (1..n).map(|i| rng.random_range(0..i)).collect();
    let label: Vec<NodeLabel> = (0..n).map(|_| labels[rng.random_range(0..labels.len())]).collect();
    fn build(i: usize, parents: &[usize], label: &[NodeLabel]) -> StructTree {
        let children = (1..label.len())
            .filter(|&j| parents[j - 1] == i)
            .map(|j| build(j, parents, label))
            .collect();
        StructTree { label: label[i], children }
    }
    build(0, &parents, &label)
}

/// Corner decoding by exhaustive scan: a cell is a peak when no cell of its
/// 3x3 neighbourhood is larger; peaks are then taken by repeated selection
/// of the best remaining one.
pub fn peak_scan(
    kind: CornerKind,
    h: usize,
    w: usize,
    heat: &[f64],
    off_x: &[f64],
    off_y: &[f64],
    stride: usize,
    top_k: usize,
    thr: f64,
) -> Vec<CornerPoint> {
    let mut peaks = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let v = heat[y as usize * w + x as usize];
            let mut is_peak = true;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64 && heat[ny as usize * w + nx as usize] > v {
                        is_peak = false;
                    }
                }
            }
            if is_peak {
                peaks.push(y as usize * w + x as usize);
            }
        }
    }
    let mut chosen = Vec::new();
    while chosen.len() < top_k && !peaks.is_empty() {
        let mut best = 0;
        for k in 1..peaks.len() {
            if heat[peaks[k]] > heat[peaks[best]] {
                best = k;
            }
        }
        chosen.push(peaks.remove(best));
    }
    let s = stride as f64;
    chosen
        .into_iter()
        .filter(|&i| heat[i] >= thr)
        .map(|i| CornerPoint {
            kind,
            x: ((i % w) as f64 + off_x[i]) * s,
            y: ((i / w) as f64 + off_y[i]) * s,
            score: heat[i],
        })
        .collect()
}

/// Every file of a corpus directory with its bytes, in a stable order.
pub fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["images", "annotations"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p).unwrap()));
        }
    }
    out.push(("manifest.json".into(), std::fs::read(dir.join("manifest.json")).unwrap()));
    out
}

/// Page JSON from freshly seeded, untrained models.
pub fn inference_json(items: &[tabstruct::datagen::CorpusItem], workers: usize) -> Vec<String> {
    use candle_core::DType;
    use tabstruct::detector::{DetectorConfig, TableDetector};
    use tabstruct::pipeline::{content_boxes, to_json, Pipeline};
    use tabstruct::recognizer::{RecognizerConfig, TableRecognizer};

    let pages: Vec<_> = items
        .iter()
        .map(|it| (it.id.clone(), it.load_image().unwrap(), content_boxes(&it.annotation)))
        .collect();
    let p = Pipeline {
        detector: TableDetector::new(DetectorConfig::desk(), DType::F32, 1).unwrap(),
        recognizer: TableRecognizer::new(RecognizerConfig::desk(), DType::F32, 2).unwrap(),
    };
    p.process_pages(&pages, workers).unwrap().iter().map(|r| to_json(r).unwrap()).collect()
}
