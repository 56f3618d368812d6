//! Checks shared by the per-area integration tests and the acceptance run.

use std::path::Path;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabstruct::datagen::{read_corpus, synthesize_page, write_corpus, SynthConfig};
use tabstruct::detector::{decode_corner_grid, decode_corners, DetectorConfig, TableDetector};
use tabstruct::geometry::{nms, BBox, Raster, ScoredBox};
use tabstruct::grid_assembler::{assemble_grid, BINARIZE_THRESHOLD};
use tabstruct::merger::{adjacent_pairs, apply_merges, label_pairs, oracle_pair_labels, PairLabel};
use tabstruct::metrics::{adjacency_relations, detection_matches, tree_edit_distance, MatchCounts};
use tabstruct::nn::ops::CornerKind;
use tabstruct::nn::{FeatureMap, Heatmap};
use tabstruct::pipeline::crop_table;
use tabstruct::recognizer::{RecognizerConfig, TableRecognizer};
use tabstruct::splitter::{make_separator_gt, rasterize_gt};
use tabstruct::trainer::{score_crop, table_refs, train_detector, train_tsr, tsr_sample, TrainConfig, TraceRow};

use super::{adjacency_brute, nms_pairwise, peak_scan, random_partition, random_tree, ted_memo};

fn random_boxes(rng: &mut impl Rng, n: usize) -> Vec<ScoredBox> {
    (0..n)
        .map(|_| {
            let bbox = BBox {
                x: rng.random_range(0.0..60.0),
                y: rng.random_range(0.0..60.0),
                w: rng.random_range(1.0..40.0),
                h: rng.random_range(1.0..40.0),
            };
            // coarse scores so ties occur
            let score = f64::from(rng.random_range(0u8..6)) / 5.0;
            ScoredBox { bbox, score }
        })
        .collect()
}

/// Number of random cases where NMS disagrees with the pairwise definition.
pub fn nms_mismatches(cases: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..cases)
        .filter(|&case| {
            let n = rng.random_range(0..25);
            let boxes = random_boxes(&mut rng, n);
            let thr = [0.3, 0.5, 0.7][case % 3];
            nms(&boxes, thr) != nms_pairwise(&boxes, thr)
        })
        .count()
}

pub fn adjacency_mismatches(cases: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..cases)
        .filter(|_| {
            let rows = rng.random_range(1..7);
            let cols = rng.random_range(1..7);
            let spans = random_partition(&mut rng, rows, cols, 0.3);
            let nonempty: Vec<bool> = spans.iter().map(|_| rng.random_bool(0.8)).collect();
            adjacency_relations(&spans, rows, cols, &nonempty) != adjacency_brute(&spans, rows, cols, &nonempty)
        })
        .count()
}

/// Tree pairs of at most 15 nodes where the fast TED disagrees with the
/// memoized recursion.
pub fn ted_mismatches(cases: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..cases)
        .filter(|_| {
            let a = random_tree(&mut rng, 15);
            let b = random_tree(&mut rng, 15);
            tree_edit_distance(&a, &b) != ted_memo(&a, &b)
        })
        .count()
}

/// Random heatmaps where either decoding path disagrees with the exhaustive
/// peak scan.
pub fn corner_decode_mismatches(cases: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dev = Device::Cpu;
    (0..cases)
        .filter(|&case| {
            let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
            // quantized heat so plateaus and ties are common
            let heat: Vec<f64> = (0..h * w).map(|_| f64::from(rng.random_range(0u8..8)) / 8.0).collect();
            let ox: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
            let oy: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
            let kind = if case % 2 == 0 { CornerKind::TopLeft } else { CornerKind::BottomRight };
            let top_k = rng.random_range(1..10);
            let thr = rng.random_range(0.0..0.6);
            let want = peak_scan(kind, h, w, &heat, &ox, &oy, 8, top_k, thr);
            let grid = decode_corner_grid(kind, h, w, &heat, &ox, &oy, 8, top_k, thr);
            let hm = Heatmap::new(FeatureMap::new(Tensor::from_vec(heat, (1, 1, h, w), &dev).unwrap(), 8).unwrap()).unwrap();
            let off: Vec<f64> = ox.into_iter().chain(oy).collect();
            let off = FeatureMap::new(Tensor::from_vec(off, (1, 2, h, w), &dev).unwrap(), 8).unwrap();
            let tensor = decode_corners(kind, &hm, &off, top_k, thr).unwrap();
            grid != want || tensor != want
        })
        .count()
}

pub fn straight_tables() -> SynthConfig {
    SynthConfig { tables_max: 1, span_prob: 0.15, ..SynthConfig::default() }
}

pub fn curved_tables() -> SynthConfig {
    SynthConfig { curved_prob: 1.0, ..straight_tables() }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RoundTrip {
    pub counts: bool,
    /// Spans rebuilt from labels derived directly from the annotation.
    pub oracle_spans: bool,
    /// Spans rebuilt from labels assigned geometrically to ground-truth cells.
    pub assigned_spans: bool,
}

fn as_prob(m: &Raster<bool>) -> Raster<f32> {
    m.map(|&b| if b { 1.0 } else { 0.0 })
}

fn positive_scores(labels: Vec<PairLabel>) -> Vec<f64> {
    labels.into_iter().map(|l| if l == PairLabel::Positive { 1.0 } else { 0.0 }).collect()
}

/// Ground-truth separator masks of the first table of page `seed`, pushed
/// through grid assembly and merging.
pub fn round_trip(cfg: &SynthConfig, seed: u64) -> RoundTrip {
    let (img, doc) = synthesize_page(cfg, seed).unwrap();
    let (crop, local, _) = crop_table(&img, &doc.tables[0], 256).unwrap();
    let (w, h) = (crop.width() as usize, crop.height() as usize);
    let gt = make_separator_gt(&local, w, h).unwrap();
    let (row, col) = rasterize_gt(&gt, h.div_ceil(32) * 32, w.div_ceil(32) * 32);
    let grid = assemble_grid(&as_prob(&row), &as_prob(&col), w, h, BINARIZE_THRESHOLD).unwrap().grid;
    if grid.rows != local.rows || grid.cols != local.cols {
        return RoundTrip::default();
    }
    let pairs = adjacent_pairs(grid.rows, grid.cols);
    let mut want = local.spans();
    want.sort_by_key(|s| (s.start_row, s.start_col));
    let oracle = apply_merges(&grid, &pairs, &positive_scores(oracle_pair_labels(&pairs, &want)), 0.8);
    let gt_boxes: Vec<_> = local.spans().iter().map(|s| local.cell_quad(s).unwrap().hull()).collect();
    let assigned = apply_merges(&grid, &pairs, &positive_scores(label_pairs(&grid, &pairs, &gt_boxes)), 0.8);
    RoundTrip { counts: true, oracle_spans: oracle.spans() == want, assigned_spans: assigned.spans() == want }
}

pub fn round_trips(cfg: &SynthConfig, seeds: std::ops::Range<u64>) -> Vec<RoundTrip> {
    seeds.map(|s| round_trip(cfg, s)).collect()
}

/// Overfitting schedule: 2000 steps of one image, decays at 70% and 90%.
pub fn overfit_schedule() -> TrainConfig {
    TrainConfig {
        iterations: 2000,
        decay_steps: vec![1400, 1800],
        base_lr: 0.32,
        augment: false,
        log_every: 100,
        ..TrainConfig::default()
    }
}

pub struct DetectorOverfit {
    pub trace: Vec<TraceRow>,
    /// Counts at IoU 0.6, 0.7, 0.8, 0.9.
    pub counts: Vec<(f64, MatchCounts)>,
    pub elapsed: Duration,
}

/// Train the small detector on 20 synthetic pages and evaluate on them.
pub fn detector_overfit(dir: &Path, cfg: &TrainConfig) -> DetectorOverfit {
    write_corpus(dir, &SynthConfig { curved_prob: 0.3, ..SynthConfig::default() }, 0, 20).unwrap();
    let items = read_corpus(dir).unwrap();
    let start = Instant::now();
    let model = TableDetector::new(DetectorConfig::desk(), DType::F32, 0).unwrap();
    let trace = train_detector(&model, &items, cfg).unwrap();
    let mut counts: Vec<(f64, MatchCounts)> = [0.6, 0.7, 0.8, 0.9].into_iter().map(|t| (t, MatchCounts::default())).collect();
    for it in &items {
        let dets = model.detect_tables(&it.load_image().unwrap()).unwrap();
        let preds: Vec<ScoredBox> = dets.iter().map(|d| ScoredBox { bbox: d.quad.hull(), score: d.score }).collect();
        let gts = it.annotation.table_boxes();
        for (t, c) in counts.iter_mut() {
            c.add(detection_matches(&preds, &gts, *t));
        }
    }
    DetectorOverfit { trace, counts, elapsed: start.elapsed() }
}

pub struct TsrOverfit {
    pub trace: Vec<TraceRow>,
    pub tables: usize,
    pub mean_adjacency_f1: f64,
    pub mean_teds: f64,
}

/// Train the small recognizer on 20 single-table pages with spans and
/// curvature, then score it on the same tables.
pub fn tsr_overfit(dir: &Path, cfg: &TrainConfig) -> TsrOverfit {
    let synth = SynthConfig { tables_max: 1, curved_prob: 0.5, span_prob: 0.15, ..SynthConfig::default() };
    write_corpus(dir, &synth, 100, 20).unwrap();
    let items = read_corpus(dir).unwrap();
    let model = TableRecognizer::new(RecognizerConfig::desk(), DType::F32, 0).unwrap();
    let trace = train_tsr(&model, &items, cfg).unwrap();
    let refs = table_refs(&items);
    let (mut adj, mut teds) = (0.0, 0.0);
    for r in &refs {
        let (crop, local) = tsr_sample(&model, &items, *r).unwrap();
        let (a, t) = score_crop(&model, &crop, &local).unwrap();
        adj += a;
        teds += t;
    }
    let n = refs.len() as f64;
    TsrOverfit { trace, tables: refs.len(), mean_adjacency_f1: adj / n, mean_teds: teds / n }
}
