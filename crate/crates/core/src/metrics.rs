//! Evaluation: IoU-thresholded detection P/R/F1 and its weighted average,
//! the adjacency-relation structure metric, and structure-only TEDS.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::annotation::Span;
use crate::geometry::{iou, BBox, ScoredBox};

pub const WAVG_THRESHOLDS: [f64; 4] = [0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Raw match counts; summed over documents before computing P/R/F1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub matched: usize,
    pub predicted: usize,
    pub actual: usize,
}

impl MatchCounts {
    pub fn add(&mut self, other: MatchCounts) {
        self.matched += other.matched;
        self.predicted += other.predicted;
        self.actual += other.actual;
    }

    /// P/R/F1. Nothing predicted and nothing expected is a perfect match;
    /// otherwise an empty denominator gives 0.
    pub fn prf(&self) -> Prf {
        if self.predicted == 0 && self.actual == 0 {
            return Prf { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.matched, self.predicted);
        let recall = ratio(self.matched, self.actual);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1 }
    }
}

/// Greedy one-to-one matching by descending score: each prediction takes the
/// unmatched ground truth with the highest IoU, if that IoU reaches the
/// threshold.
pub fn detection_matches(preds: &[ScoredBox], gts: &[BBox], iou_threshold: f64) -> MatchCounts {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut matched = 0;
    for i in order {
        let best = (0..gts.len())
            .filter(|&j| !taken[j])
            .map(|j| (j, iou(&preds[i].bbox, &gts[j])))
            .filter(|&(_, v)| v >= iou_threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((j, _)) = best {
            taken[j] = true;
            matched += 1;
        }
    }
    MatchCounts { matched, predicted: preds.len(), actual: gts.len() }
}

pub fn detection_prf(preds: &[ScoredBox], gts: &[BBox], iou_threshold: f64) -> Prf {
    detection_matches(preds, gts, iou_threshold).prf()
}

/// Threshold-weighted mean `sum(t_i * f1_i) / sum(t_i)`.
pub fn wavg_f1(per_threshold: &[(f64, f64)]) -> f64 {
    let den: f64 = per_threshold.iter().map(|(t, _)| t).sum();
    if den == 0.0 {
        return 0.0;
    }
    per_threshold.iter().map(|(t, f)| t * f).sum::<f64>() / den
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// Relation between two cells, identified by their index in the span list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AdjacencyRelation {
    pub from: usize,
    pub to: usize,
    pub direction: Direction,
}

fn owner_grid(spans: &[Span], rows: usize, cols: usize) -> Vec<usize> {
    let mut owner = vec![usize::MAX; rows * cols];
    for (i, s) in spans.iter().enumerate() {
        for r in s.start_row..=s.end_row.min(rows.saturating_sub(1)) {
            for c in s.start_col..=s.end_col.min(cols.saturating_sub(1)) {
                owner[r * cols + c] = i;
            }
        }
    }
    owner
}

/// For every non-empty cell, the nearest non-empty cell to its right along
/// each of its rows and below along each of its columns; empty cells are
/// skipped over.
pub fn adjacency_relations(spans: &[Span], rows: usize, cols: usize, nonempty: &[bool]) -> BTreeSet<AdjacencyRelation> {
    let owner = owner_grid(spans, rows, cols);
    let mut out = BTreeSet::new();
    for (i, s) in spans.iter().enumerate() {
        if !nonempty[i] {
            continue;
        }
        for r in s.start_row..=s.end_row {
            let hit = (s.end_col + 1..cols).map(|c| owner[r * cols + c]).find(|&o| o != usize::MAX && nonempty[o]);
            if let Some(to) = hit {
                out.insert(AdjacencyRelation { from: i, to, direction: Direction::Horizontal });
            }
        }
        for c in s.start_col..=s.end_col {
            let hit = (s.end_row + 1..rows).map(|r| owner[r * cols + c]).find(|&o| o != usize::MAX && nonempty[o]);
            if let Some(to) = hit {
                out.insert(AdjacencyRelation { from: i, to, direction: Direction::Vertical });
            }
        }
    }
    out
}

/// A table whose cells carry the ids of the content boxes assigned to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentTable {
    pub rows: usize,
    pub cols: usize,
    pub spans: Vec<Span>,
    /// Sorted content ids per cell; empty for blank cells.
    pub content: Vec<Vec<usize>>,
}

impl ContentTable {
    /// Relations keyed by the content of both ends.
    pub fn keyed_relations(&self) -> BTreeSet<(Vec<usize>, Vec<usize>, Direction)> {
        let nonempty: Vec<bool> = self.content.iter().map(|c| !c.is_empty()).collect();
        adjacency_relations(&self.spans, self.rows, self.cols, &nonempty)
            .into_iter()
            .map(|r| (self.content[r.from].clone(), self.content[r.to].clone(), r.direction))
            .collect()
    }
}

pub fn adjacency_counts(pred: &ContentTable, gt: &ContentTable) -> MatchCounts {
    let p = pred.keyed_relations();
    let g = gt.keyed_relations();
    MatchCounts { matched: p.intersection(&g).count(), predicted: p.len(), actual: g.len() }
}

/// Adjacency-relation P/R/F1 with cells matched through their content.
pub fn adjacency_prf(pred: &ContentTable, gt: &ContentTable) -> Prf {
    adjacency_counts(pred, gt).prf()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeLabel {
    Table,
    Row,
    Cell { rowspan: usize, colspan: usize },
}

/// Rooted ordered tree: table, then one row per grid row, then the cells
/// starting in that row left to right.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructTree {
    pub label: NodeLabel,
    pub children: Vec<StructTree>,
}

impl StructTree {
    pub fn leaf(label: NodeLabel) -> Self {
        Self { label, children: Vec::new() }
    }

    pub fn from_spans(rows: usize, spans: &[Span]) -> Self {
        let children = (0..rows)
            .map(|r| {
                let mut cells: Vec<&Span> = spans.iter().filter(|s| s.start_row == r).collect();
                cells.sort_by_key(|s| s.start_col);
                StructTree {
                    label: NodeLabel::Row,
                    children: cells
                        .into_iter()
                        .map(|s| StructTree::leaf(NodeLabel::Cell { rowspan: s.rowspan(), colspan: s.colspan() }))
                        .collect(),
                }
            })
            .collect();
        StructTree { label: NodeLabel::Table, children }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(StructTree::size).sum::<usize>()
    }

    /// Post-order labels and leftmost-leaf indices.
    fn postorder(&self, labels: &mut Vec<NodeLabel>, lml: &mut Vec<usize>) -> usize {
        let mut first = None;
        for c in &self.children {
            let l = c.postorder(labels, lml);
            first.get_or_insert(l);
        }
        let me = labels.len();
        labels.push(self.label);
        let l = first.unwrap_or(me);
        lml.push(l);
        l
    }
}

/// Unit-cost ordered tree edit distance (Zhang–Shasha).
pub fn tree_edit_distance(a: &StructTree, b: &StructTree) -> usize {
    let (mut la, mut ma) = (Vec::new(), Vec::new());
    let (mut lb, mut mb) = (Vec::new(), Vec::new());
    a.postorder(&mut la, &mut ma);
    b.postorder(&mut lb, &mut mb);
    let keyroots = |lml: &[usize]| -> Vec<usize> {
        (0..lml.len()).filter(|&i| !(i + 1..lml.len()).any(|j| lml[j] == lml[i])).collect()
    };
    let (ka, kb) = (keyroots(&ma), keyroots(&mb));
    let (n, m) = (la.len(), lb.len());
    let mut td = vec![vec![0usize; m]; n];
    let mut fd = vec![vec![0usize; m + 1]; n + 1];
    for &i in &ka {
        for &j in &kb {
            let (li, lj) = (ma[i], mb[j]);
            fd[0][0] = 0;
            for x in 1..=i - li + 1 {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..=j - lj + 1 {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..=i - li + 1 {
                for y in 1..=j - lj + 1 {
                    let (ni, nj) = (li + x - 1, lj + y - 1);
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if ma[ni] == li && mb[nj] == lj {
                        let sub = fd[x - 1][y - 1] + usize::from(la[ni] != lb[nj]);
                        fd[x][y] = del.min(ins).min(sub);
                        td[ni][nj] = fd[x][y];
                    } else {
                        let px = ma[ni] - li;
                        let py = mb[nj] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ni][nj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// `1 - TED / max(|a|, |b|)` over structure-only trees, floored at 0 (the
/// distance can exceed the larger size when the shapes disagree badly).
pub fn teds_struct(a: &StructTree, b: &StructTree) -> f64 {
    let d = tree_edit_distance(a, b) as f64;
    (1.0 - d / a.size().max(b.size()) as f64).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScore {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image: String,
    pub detection: Vec<ThresholdScore>,
    pub adjacency_f1: Vec<f64>,
    pub teds_struct: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detection: Vec<ThresholdScore>,
    pub wavg_f1: f64,
    pub mean_adjacency_f1: f64,
    pub mean_teds_struct: f64,
    pub images: Vec<ImageScore>,
}
