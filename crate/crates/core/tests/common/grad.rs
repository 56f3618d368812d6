//! Finite-difference checks of the hand-written differentiable operators.
//! Each returns `(what, relative error)` for every checked input.

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabstruct::geometry::BBox;
use tabstruct::merger::{adjacent_pairs, GridFeatures, MergeConfig, MergeHead, SPATIAL_DIM};
use tabstruct::nn::gradcheck::check_gradient;
use tabstruct::nn::layers::{Conv2d, ConvOpts};
use tabstruct::nn::ops::{corner_pool, roi_align, CornerKind};
use tabstruct::nn::scnn::{Direction, SpatialConv};
use tabstruct::nn::{FeatureMap, Init, ParamStore};

use super::uniform_grid;

pub const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

type Errors = Vec<(String, f64)>;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn var(shape: &[usize], seed: u64) -> Var {
    Var::from_tensor(&random(shape, seed)).unwrap()
}

/// Random linear functional of `t`, so every output coordinate matters.
fn project(t: &Tensor, seed: u64) -> tabstruct::Result<Tensor> {
    let w = random(t.dims(), seed);
    Ok((t * w)?.sum_all()?)
}

pub fn corner_pool_errors() -> Errors {
    [CornerKind::TopLeft, CornerKind::BottomRight]
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let x = var(&[1, 3, 7, 9], 10 + i as u64);
            let f = || project(&corner_pool(&FeatureMap::new(x.as_tensor().clone(), 8)?, kind)?.tensor, 99);
            (format!("{kind:?}"), check_gradient(&x, f, EPS, 400, 1).unwrap())
        })
        .collect()
}

pub fn scnn_errors() -> Errors {
    let dirs = [Direction::LeftToRight, Direction::RightToLeft, Direction::TopToBottom, Direction::BottomToTop];
    let mut out = Vec::new();
    for (i, dir) in dirs.into_iter().enumerate() {
        let x = var(&[1, 4, 6, 5], 20 + i as u64);
        let w = var(&[4, 4, 3], 30 + i as u64);
        let b = var(&[4], 40 + i as u64);
        let f = || {
            let conv = SpatialConv::from_weights(w.as_tensor().clone(), b.as_tensor().clone(), dir)?;
            project(&conv.forward(x.as_tensor())?, 7)
        };
        out.push((format!("{dir:?} input"), check_gradient(&x, f, EPS, 120, 2).unwrap()));
        out.push((format!("{dir:?} kernel"), check_gradient(&w, f, EPS, 48, 3).unwrap()));
        out.push((format!("{dir:?} bias"), check_gradient(&b, f, EPS, 4, 4).unwrap()));
    }
    out
}

pub fn roi_align_errors() -> Errors {
    let x = var(&[1, 3, 12, 16], 50);
    let boxes = [
        BBox { x: 3.3, y: 5.1, w: 30.7, h: 21.9 },
        BBox { x: 0.0, y: 0.0, w: 64.0, h: 48.0 },
        BBox { x: 40.2, y: 20.6, w: 9.1, h: 17.5 },
    ];
    let f = || project(&roi_align(&FeatureMap::new(x.as_tensor().clone(), 4)?, &boxes, 7)?, 8);
    vec![("input".into(), check_gradient(&x, f, EPS, 300, 5).unwrap())]
}

/// Stride-2 convolutions on inputs whose height and width leave different
/// remainders, where the output-padding bookkeeping of the backward pass is
/// easy to get wrong.
pub fn strided_conv_errors() -> Errors {
    let store = ParamStore::new(DType::F64, 4);
    let conv = Conv2d::new(&store.root().pp("c"), 2, 3, (3, 3), ConvOpts::same(3).stride(2), Init::Normal(0.5)).unwrap();
    let w = store.get("c.weight").unwrap();
    let mut out = Vec::new();
    for (i, (h, wd)) in [(8, 9), (9, 8), (7, 10)].into_iter().enumerate() {
        let x = var(&[1, 2, h, wd], 60 + i as u64);
        let f = || project(&conv.forward(x.as_tensor())?, 61);
        out.push((format!("{h}x{wd} input"), check_gradient(&x, f, EPS, 200, 6).unwrap()));
        out.push((format!("{h}x{wd} kernel"), check_gradient(&w, f, EPS, 54, 7).unwrap()));
    }
    out
}

fn merge_head(channels: usize) -> (ParamStore, MergeHead) {
    let store = ParamStore::new(DType::F64, 3);
    let cfg = MergeConfig { feature_dim: 6, relation_hidden: 5 };
    let head = MergeHead::new(&store.root().pp("merge"), channels, &cfg).unwrap();
    (store, head)
}

pub fn grid_features_errors() -> Errors {
    let (store, head) = merge_head(2);
    let grid = uniform_grid(2, 3, 2.0, 9.0);
    let p2 = var(&[1, 2, 8, 10], 60);
    let f = || {
        let g = head.grid_features(&FeatureMap::new(p2.as_tensor().clone(), 4)?, &grid)?;
        project(&g.tensor, 9)
    };
    let w = store.get("merge.fc1.weight").unwrap();
    vec![
        ("feature map".into(), check_gradient(&p2, f, EPS, 160, 6).unwrap()),
        ("fc1 weight".into(), check_gradient(&w, f, EPS, 200, 7).unwrap()),
    ]
}

pub fn grid_cnn_errors() -> Errors {
    let (store, head) = merge_head(2);
    let x = var(&[12, 6], 70);
    let f = || {
        let g = head.grid_cnn(&GridFeatures { rows: 3, cols: 4, tensor: x.as_tensor().clone(), degenerate: Vec::new() })?;
        project(&g.tensor, 10)
    };
    let mut out = vec![("input".to_string(), check_gradient(&x, f, EPS, 72, 8).unwrap())];
    for name in ["merge.grid0.weight", "merge.grid2.weight"] {
        let w = store.get(name).unwrap();
        out.push((name.into(), check_gradient(&w, f, EPS, 150, 9).unwrap()));
    }
    out
}

pub fn relation_mlp_errors() -> Errors {
    let (store, head) = merge_head(2);
    let x = var(&[5, 2 * 6 + SPATIAL_DIM], 80);
    let f = || project(&head.relation_logits(x.as_tensor())?, 11);
    let mut out = vec![("input".to_string(), check_gradient(&x, f, EPS, 150, 10).unwrap())];
    for name in ["merge.rel0.weight", "merge.rel1.weight", "merge.rel2.weight"] {
        let w = store.get(name).unwrap();
        out.push((name.into(), check_gradient(&w, f, EPS, 150, 11).unwrap()));
    }
    // the symmetric pair scorer on top of it
    let grid = uniform_grid(2, 2, 0.0, 8.0);
    let pairs = adjacent_pairs(2, 2);
    let g = var(&[4, 6], 81);
    let f = || {
        let feats = GridFeatures { rows: 2, cols: 2, tensor: g.as_tensor().clone(), degenerate: Vec::new() };
        project(&head.score_pairs(&feats, &grid, &pairs)?, 12)
    };
    out.push(("pair scorer".into(), check_gradient(&g, f, EPS, 24, 12).unwrap()));
    out
}

/// Every check, labelled by operator.
pub fn all() -> Vec<(&'static str, Errors)> {
    vec![
        ("corner_pool", corner_pool_errors()),
        ("scnn", scnn_errors()),
        ("roi_align", roi_align_errors()),
        ("grid_features", grid_features_errors()),
        ("grid_cnn", grid_cnn_errors()),
        ("relation_mlp", relation_mlp_errors()),
    ]
}
