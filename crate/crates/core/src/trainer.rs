//! Optimization loops: SGD with momentum and weight decay, a step learning
//! rate schedule, multi-scale/rotation augmentation for the detector, hard
//! example mining, and CSV loss traces.

use std::path::Path;

use candle_core::{backprop::GradStore, DType, Tensor, Var};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotation::TableAnnotation;
use crate::datagen::{bilinear, CorpusItem};
use crate::detector::{
    assign_proposal_labels, corner_loss, detector_loss, encode_quad, frcn_loss, frcn_sample_losses, make_corner_targets,
    ProposalLabel, TableDetector,
};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Point, Quad};
use crate::grid_assembler::assemble_grid;
use crate::merger::{adjacent_pairs, label_pairs, merge_loss};
use crate::metrics::ContentTable;
use crate::nn::image_to_tensor;
use crate::pipeline::{assign_content, crop_table, structure_scores};
use crate::recognizer::{pad_input, recognizer_loss, TableRecognizer};
use crate::splitter::{make_separator_gt, rasterize_gt, sample_split_pixels, split_loss};

/// Learning rates are specified for steps of this many images.
pub const REFERENCE_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    /// Iterations after which the learning rate is divided by 10.
    pub decay_steps: Vec<usize>,
    pub images_per_step: usize,
    /// Shorter-side lengths drawn per detector step when augmenting.
    pub scales: Vec<usize>,
    /// Base rotations in degrees, each perturbed by up to `rotation_jitter`.
    pub rotations: Vec<f64>,
    pub rotation_jitter: f64,
    pub augment: bool,
    pub ohem_proposals_pos: usize,
    pub ohem_proposals_neg: usize,
    /// Jittered copies of every ground-truth box added as proposals.
    pub gt_jitter_count: usize,
    /// Standard deviation of the jitter relative to the box size.
    pub gt_jitter_std: f64,
    /// Learning-rate factor for the FRCN quad-regression layer. The L1 loss
    /// hands it sign gradients that do not shrink near the optimum and its
    /// step on the output grows with the squared hidden activation norm; at
    /// the full rate the outputs oscillate and drive the hidden ReLUs dead.
    pub regression_lr_scale: f64,
    /// Boxes per ground-truth table that keep one of its corners and move
    /// the opposite one anywhere on the page, imitating mismatched corner
    /// pairs. Most fall below the negative IoU threshold.
    pub corner_negative_count: usize,
    pub split_pixels: usize,
    pub ohem_pairs_pos: usize,
    pub ohem_pairs_neg: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.032,
            momentum: 0.9,
            weight_decay: 0.0005,
            iterations: 2000,
            decay_steps: vec![1400, 1800],
            images_per_step: 1,
            scales: vec![320, 416, 512, 608, 704, 800],
            rotations: vec![0.0, 90.0, 180.0, 270.0],
            rotation_jitter: 5.0,
            augment: true,
            ohem_proposals_pos: 32,
            ohem_proposals_neg: 32,
            gt_jitter_count: 8,
            gt_jitter_std: 0.05,
            corner_negative_count: 8,
            regression_lr_scale: 0.01,
            split_pixels: 1024,
            ohem_pairs_pos: 64,
            ohem_pairs_neg: 64,
            grad_clip: 10.0,
            seed: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config { key: "<file>".into(), reason: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config { key: "<file>".into(), reason: e.to_string() })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Err(Error::Config { key: key.into(), reason: reason.into() });
        for (key, v) in [
            ("iterations", self.iterations),
            ("images_per_step", self.images_per_step),
            ("ohem_proposals_pos", self.ohem_proposals_pos),
            ("ohem_proposals_neg", self.ohem_proposals_neg),
            ("split_pixels", self.split_pixels),
            ("ohem_pairs_pos", self.ohem_pairs_pos),
            ("ohem_pairs_neg", self.ohem_pairs_neg),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1");
            }
        }
        if self.decay_steps.iter().any(|&d| d >= self.iterations) {
            return bad("decay_steps", "every decay point must precede the last iteration");
        }
        if self.decay_steps.windows(2).any(|w| w[1] <= w[0]) {
            return bad("decay_steps", "must be strictly increasing");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr", "must be positive");
        }
        if !(self.regression_lr_scale >= 0.0 && self.regression_lr_scale.is_finite()) {
            return bad("regression_lr_scale", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay", "must be non-negative");
        }
        if self.augment && (self.scales.is_empty() || self.rotations.is_empty()) {
            return bad("scales", "augmentation needs at least one scale and one rotation");
        }
        if self.scales.iter().any(|&s| s < 32) {
            return bad("scales", "every scale must be at least 32");
        }
        if self.grad_clip <= 0.0 {
            return bad("grad_clip", "must be positive");
        }
        Ok(())
    }

    /// Learning rate at `iteration`: the base rate scaled by the step's image
    /// count, divided by 10 at every decay point already passed.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let passed = self.decay_steps.iter().filter(|&&d| iteration >= d).count();
        self.base_lr * self.images_per_step as f64 / REFERENCE_BATCH as f64 * 0.1f64.powi(passed as i32)
    }
}

/// Stochastic gradient descent with momentum and L2 weight decay:
/// `v <- mu v + (g + wd w)`, `w <- w - lr v`.
pub struct Sgd {
    vars: Vec<(String, Var)>,
    velocity: Vec<Option<Tensor>>,
    lr_scale: Vec<f64>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(vars: Vec<(String, Var)>, momentum: f64, weight_decay: f64) -> Self {
        let n = vars.len();
        Self { vars, velocity: vec![None; n], lr_scale: vec![1.0; n], momentum, weight_decay }
    }

    /// Multiply the learning rate of every variable whose name starts with
    /// `prefix` by `factor`.
    pub fn scale_lr(mut self, prefix: &str, factor: f64) -> Self {
        for ((name, _), s) in self.vars.iter().zip(self.lr_scale.iter_mut()) {
            if name.starts_with(prefix) {
                *s *= factor;
            }
        }
        self
    }

    /// Apply one update; gradients are rescaled to global norm `clip` when
    /// larger. Returns the norm before clipping.
    pub fn step(&mut self, grads: &GradStore, lr: f64, clip: f64) -> Result<f64> {
        let mut sq = 0.0;
        for (_, v) in &self.vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite gradient norm {norm}")));
        }
        let scale = if norm > clip { clip / norm } else { 1.0 };
        for (((_, var), vel), &scale_lr) in self.vars.iter().zip(self.velocity.iter_mut()).zip(&self.lr_scale) {
            let lr = lr * scale_lr;
            let w = var.as_tensor();
            let g = match grads.get(w) {
                Some(g) => (g * scale)?,
                None => w.zeros_like()?,
            };
            let d = (g + (w * self.weight_decay)?)?.detach();
            let v = match vel.take() {
                Some(prev) => ((prev * self.momentum)? + d)?,
                None => d,
            };
            var.set(&(w - (&v * lr)?)?)?;
            *vel = Some(v);
        }
        Ok(norm)
    }
}

/// One row of a loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub total: f64,
    /// Corner and FRCN terms for the detector; split and merge for the recognizer.
    pub terms: [f64; 2],
    pub lr: f64,
}

pub fn write_trace(path: &Path, names: [&str; 2], rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["iteration", "total", names[0], names[1], "lr"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            format!("{:.9}", r.total),
            format!("{:.9}", r.terms[0]),
            format!("{:.9}", r.terms[1]),
            format!("{}", r.lr),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn check_finite(iteration: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { iteration, detail: format!("{what} loss is {v}") })
    }
}

/// Rotate a page by `degrees` (clockwise in image coordinates) about its
/// center onto a canvas just large enough for the rotated page.
pub fn rotate_page(img: &RgbImage, quads: &[Quad], degrees: f64) -> (RgbImage, Vec<Quad>) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (s, c) = degrees.to_radians().sin_cos();
    let nw = (w * c.abs() + h * s.abs()).round().max(1.0);
    let nh = (w * s.abs() + h * c.abs()).round().max(1.0);
    let fwd = |p: Point| {
        let (dx, dy) = (p.x - w / 2.0, p.y - h / 2.0);
        Point::new(c * dx - s * dy + nw / 2.0, s * dx + c * dy + nh / 2.0)
    };
    let inv = |q: Point| {
        let (dx, dy) = (q.x - nw / 2.0, q.y - nh / 2.0);
        Point::new(c * dx + s * dy + w / 2.0, -s * dx + c * dy + h / 2.0)
    };
    let fill = *img.get_pixel(0, 0);
    let out = RgbImage::from_fn(nw as u32, nh as u32, |x, y| {
        let p = inv(Point::new(x as f64 + 0.5, y as f64 + 0.5));
        bilinear(img, p.x, p.y, fill)
    });
    (out, quads.iter().map(|q| q.map(fwd)).collect())
}

fn resize_page(img: &RgbImage, quads: &[Quad], nw: u32, nh: u32) -> (RgbImage, Vec<Quad>) {
    if (nw, nh) == img.dimensions() {
        return (img.clone(), quads.to_vec());
    }
    let sx = nw as f64 / img.width() as f64;
    let sy = nh as f64 / img.height() as f64;
    let out = image::imageops::resize(img, nw, nh, image::imageops::FilterType::Triangle);
    (out, quads.iter().map(|q| q.map(|p| Point::new(p.x * sx, p.y * sy))).collect())
}

/// Network input and target quads for one detector step.
fn detector_sample(
    model: &TableDetector,
    item: &CorpusItem,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(RgbImage, Vec<Quad>)> {
    let img = item.load_image()?;
    let quads: Vec<Quad> = item.annotation.tables.iter().map(|t| t.quad).collect();
    let (img, quads) = if cfg.augment {
        let base = cfg.rotations[rng.random_range(0..cfg.rotations.len())];
        let angle = base + rng.random_range(-cfg.rotation_jitter..=cfg.rotation_jitter);
        let (img, quads) = rotate_page(&img, &quads, angle);
        let short = cfg.scales[rng.random_range(0..cfg.scales.len())] as f64;
        let s = short / img.width().min(img.height()) as f64;
        let nw = ((img.width() as f64 * s).round() as u32).max(32);
        let nh = ((img.height() as f64 * s).round() as u32).max(32);
        resize_page(&img, &quads, nw, nh)
    } else {
        let s = model.config.scale_for(img.width(), img.height());
        let nw = ((img.width() as f64 * s).round() as u32).max(32);
        let nh = ((img.height() as f64 * s).round() as u32).max(32);
        resize_page(&img, &quads, nw, nh)
    };
    Ok((img, quads))
}

/// Training proposals: decoded corner pairs, jittered ground-truth boxes,
/// boxes anchored on a single ground-truth corner and boxes joining corners
/// of different ground-truth tables.
fn training_proposals(decoded: &[BBox], gt: &[BBox], cfg: &TrainConfig, w: f64, h: f64, rng: &mut ChaCha8Rng) -> Vec<BBox> {
    let mut out: Vec<BBox> = decoded.to_vec();
    let normal = Normal::new(0.0, cfg.gt_jitter_std.max(1e-12)).expect("finite std");
    for g in gt {
        for _ in 0..cfg.gt_jitter_count {
            let x0 = g.x + normal.sample(rng) * g.w;
            let y0 = g.y + normal.sample(rng) * g.h;
            let x1 = g.x1() + normal.sample(rng) * g.w;
            let y1 = g.y1() + normal.sample(rng) * g.h;
            if let Ok(b) = BBox::from_corners(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)) {
                out.push(b);
            }
        }
        out.push(*g);
        for _ in 0..cfg.corner_negative_count {
            let (px, py) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            let b = if rng.random_bool(0.5) {
                BBox::from_corners(g.x, g.y, px.max(g.x + 1.0), py.max(g.y + 1.0))
            } else {
                BBox::from_corners(px.min(g.x1() - 1.0), py.min(g.y1() - 1.0), g.x1(), g.y1())
            };
            if let Ok(b) = b {
                out.push(b);
            }
        }
    }
    for a in gt {
        for b in gt {
            if b.x1() > a.x && b.y1() > a.y && a != b {
                if let Ok(j) = BBox::from_corners(a.x, a.y, b.x1(), b.y1()) {
                    out.push(j);
                }
            }
        }
    }
    out.into_iter().filter_map(|b| b.clip(w, h)).filter(|b| b.w >= 1.0 && b.h >= 1.0).collect()
}

fn pick_ohem(losses: &[f64], positive: &[bool], n_pos: usize, n_neg: usize) -> Vec<usize> {
    let take = |want: bool, n: usize| {
        let mut idx: Vec<usize> = (0..positive.len()).filter(|&i| positive[i] == want).collect();
        idx.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    };
    let mut out = take(true, n_pos);
    out.extend(take(false, n_neg));
    out.sort_unstable();
    out
}

/// Train the detector in place; returns the per-iteration loss trace.
pub fn train_detector(model: &TableDetector, items: &[CorpusItem], cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidInput("empty training corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(model.store().trainable(), cfg.momentum, cfg.weight_decay)
        .scale_lr("frcn.reg.", cfg.regression_lr_scale);
    let dtype = model.store().dtype();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let lr = cfg.lr_at(it);
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        let mut n_tables = 0;
        let mut frcn_parts: Vec<(Tensor, Tensor, Vec<bool>, Vec<Option<[f64; 8]>>)> = Vec::new();
        for _ in 0..cfg.images_per_step {
            let item = &items[rng.random_range(0..items.len())];
            let (img, quads) = detector_sample(model, item, cfg, &mut rng)?;
            let (w, h) = (img.width() as f64, img.height() as f64);
            let x = image_to_tensor(&img, dtype)?;
            let f = model.features(&x, true)?;
            let gt: Vec<BBox> = quads.iter().map(|q| q.hull()).collect();
            let (hf, wf) = (f.c5.height(), f.c5.width());
            targets.push(make_corner_targets(&gt, hf, wf, f.c5.stride));
            n_tables += gt.len();

            let decoded: Vec<BBox> = model.proposals(&f)?.into_iter().map(|p| p.bbox).collect();
            let props = training_proposals(&decoded, &gt, cfg, w, h, &mut rng);
            let labels = assign_proposal_labels(&props, &gt);
            let mut boxes = Vec::new();
            let mut pos = Vec::new();
            let mut tgt = Vec::new();
            for (b, l) in props.iter().zip(&labels) {
                match l {
                    ProposalLabel::Positive(i) => {
                        boxes.push(*b);
                        pos.push(true);
                        tgt.push(Some(encode_quad(b, &quads[*i])));
                    }
                    ProposalLabel::Negative => {
                        boxes.push(*b);
                        pos.push(false);
                        tgt.push(None);
                    }
                    ProposalLabel::Ignore => {}
                }
            }
            if !boxes.is_empty() {
                let (logits, reg) = model.frcn_forward(&f.c5, &boxes)?;
                let losses = frcn_sample_losses(&logits, &reg, &pos, &tgt)?;
                let sel = pick_ohem(&losses, &pos, cfg.ohem_proposals_pos, cfg.ohem_proposals_neg);
                let idx = Tensor::from_vec(sel.iter().map(|&i| i as u32).collect::<Vec<_>>(), sel.len(), logits.device())?;
                frcn_parts.push((
                    logits.index_select(&idx, 0)?,
                    reg.index_select(&idx, 0)?,
                    sel.iter().map(|&i| pos[i]).collect(),
                    sel.iter().map(|&i| tgt[i]).collect(),
                ));
            }
            preds.push(f.corners);
        }
        let l_corner = corner_loss(&preds, &targets, n_tables)?;
        let l_frcn = if frcn_parts.is_empty() {
            l_corner.zeros_like()?
        } else {
            let logits = Tensor::cat(&frcn_parts.iter().map(|p| &p.0).collect::<Vec<_>>(), 0)?;
            let reg = Tensor::cat(&frcn_parts.iter().map(|p| &p.1).collect::<Vec<_>>(), 0)?;
            let pos: Vec<bool> = frcn_parts.iter().flat_map(|p| p.2.iter().copied()).collect();
            let tgt: Vec<Option<[f64; 8]>> = frcn_parts.iter().flat_map(|p| p.3.iter().copied()).collect();
            frcn_loss(&logits, &reg, &pos, &tgt)?
        };
        let loss = detector_loss(&l_corner, &l_frcn)?;
        let row = TraceRow { iteration: it, total: scalar(&loss)?, terms: [scalar(&l_corner)?, scalar(&l_frcn)?], lr };
        check_finite(it, "detector", row.total)?;
        let grads = loss.backward()?;
        opt.step(&grads, lr, cfg.grad_clip).map_err(|e| Error::Divergence { iteration: it, detail: e.to_string() })?;
        if cfg.log_every > 0 && it % cfg.log_every == 0 {
            log::info!("detector it {it}: loss {:.4} (corner {:.4}, frcn {:.4}) lr {lr:.5}", row.total, row.terms[0], row.terms[1]);
        }
        trace.push(row);
    }
    Ok(trace)
}

/// One table of a corpus, addressed by page and table index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableRef {
    pub item: usize,
    pub table: usize,
}

pub fn table_refs(items: &[CorpusItem]) -> Vec<TableRef> {
    items
        .iter()
        .enumerate()
        .flat_map(|(i, it)| (0..it.annotation.tables.len()).map(move |t| TableRef { item: i, table: t }))
        .collect()
}

/// A table crop rescaled for the recognizer, with its annotation in crop
/// coordinates.
pub fn tsr_sample(model: &TableRecognizer, items: &[CorpusItem], r: TableRef) -> Result<(RgbImage, TableAnnotation)> {
    let item = &items[r.item];
    let img = item.load_image()?;
    let (crop, local, _) = crop_table(&img, &item.annotation.tables[r.table], model.config().long_side)?;
    Ok((crop, local))
}

/// Train the structure recognizer in place (split and merge jointly).
pub fn train_tsr(model: &TableRecognizer, items: &[CorpusItem], cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    let refs = table_refs(items);
    if refs.is_empty() {
        return Err(Error::InvalidInput("training corpus contains no tables".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(model.store().trainable(), cfg.momentum, cfg.weight_decay);
    let dtype = model.store().dtype();
    let threshold = model.config().split_threshold as f32;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let lr = cfg.lr_at(it);
        let mut split_terms = Vec::new();
        let mut merge_terms = Vec::new();
        for _ in 0..cfg.images_per_step {
            let r = refs[rng.random_range(0..refs.len())];
            let (crop, local) = tsr_sample(model, items, r)?;
            let (w, h) = (crop.width() as usize, crop.height() as usize);
            let x = pad_input(&image_to_tensor(&crop, dtype)?)?;
            let (_, _, hp, wp) = x.dims4()?;
            let (p2, logits) = model.split_forward(&x, true)?;
            let gt = make_separator_gt(&local, w, h)?;
            let (row_m, col_m) = rasterize_gt(&gt, hp, wp);
            let samples = sample_split_pixels(&row_m, &col_m, w, h, cfg.split_pixels, rng.random());
            split_terms.push(split_loss(&logits, &samples)?);

            let masks = logits.probabilities()?;
            let merge = match assemble_grid(&masks.row, &masks.col, w, h, threshold) {
                Ok(a) if a.grid.rows >= 2 && a.grid.cols >= 2 => {
                    let grid = a.grid;
                    let pairs = adjacent_pairs(grid.rows, grid.cols);
                    let gt_boxes: Vec<BBox> =
                        local.spans().iter().map(|s| local.cell_quad(s).map(|q| q.hull())).collect::<Result<_>>()?;
                    let labels = label_pairs(&grid, &pairs, &gt_boxes);
                    let f = model.grid_forward(&p2, &grid)?;
                    let scores = model.merge_head().score_pairs(&f, &grid, &pairs)?;
                    Some(merge_loss(&scores, &labels, cfg.ohem_pairs_pos, cfg.ohem_pairs_neg)?)
                }
                _ => None,
            };
            if let Some(m) = merge {
                merge_terms.push(m);
            }
        }
        let n = cfg.images_per_step as f64;
        let l_split = (Tensor::stack(&split_terms, 0)?.sum_all()? / n)?;
        let l_merge = if merge_terms.is_empty() {
            l_split.zeros_like()?
        } else {
            (Tensor::stack(&merge_terms, 0)?.sum_all()? / n)?
        };
        let loss = recognizer_loss(&l_split, &l_merge)?;
        let row = TraceRow { iteration: it, total: scalar(&loss)?, terms: [scalar(&l_split)?, scalar(&l_merge)?], lr };
        check_finite(it, "recognizer", row.total)?;
        let grads = loss.backward()?;
        opt.step(&grads, lr, cfg.grad_clip).map_err(|e| Error::Divergence { iteration: it, detail: e.to_string() })?;
        if cfg.log_every > 0 && it % cfg.log_every == 0 {
            log::info!("recognizer it {it}: loss {:.4} (split {:.4}, merge {:.4}) lr {lr:.5}", row.total, row.terms[0], row.terms[1]);
        }
        trace.push(row);
    }
    Ok(trace)
}

/// Adjacency F1 and TEDS-Struct of the recognizer on one annotated crop.
pub fn score_crop(model: &TableRecognizer, crop: &RgbImage, local: &TableAnnotation) -> Result<(f64, f64)> {
    let rec = model.recognize_structure(crop)?;
    let boxes: Vec<BBox> = local.text_boxes().map(|(_, b)| *b).collect();
    let assignment = assign_content(&boxes, &rec.structure);
    let pred = ContentTable {
        rows: rec.structure.rows,
        cols: rec.structure.cols,
        spans: rec.structure.spans(),
        content: assignment.cells,
    };
    let mut next = 0;
    let gt = ContentTable {
        rows: local.rows,
        cols: local.cols,
        spans: local.spans(),
        content: local
            .cells
            .iter()
            .map(|c| {
                let ids: Vec<usize> = (next..next + c.text_boxes.len()).collect();
                next += c.text_boxes.len();
                ids
            })
            .collect(),
    };
    Ok(structure_scores(&pred, &gt))
}
