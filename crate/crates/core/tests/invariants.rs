mod common;

use candle_core::{DType, Device, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tabstruct::annotation::Span;
use tabstruct::merger::{
    adjacent_pairs, apply_merges, merge_spans, oracle_pair_labels, CellPair, GridFeatures, MergeConfig, MergeHead,
    PairLabel,
};
use tabstruct::metrics::{adjacency_prf, teds_struct, ContentTable, StructTree};
use tabstruct::nn::ParamStore;

use common::{random_partition, random_tree, uniform_grid};

fn covers_exactly_once(spans: &[Span], rows: usize, cols: usize) -> bool {
    (0..rows).all(|r| (0..cols).all(|c| spans.iter().filter(|s| s.contains(r, c)).count() == 1))
}

proptest! {
    #[test]
    fn merged_spans_partition_the_grid(
        rows in 1usize..8,
        cols in 1usize..8,
        seed in any::<u64>(),
        thr in 0.05f64..0.95,
    ) {
        let pairs = adjacent_pairs(rows, cols);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = pairs.iter().map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let spans = merge_spans(rows, cols, &pairs, &scores, thr);
        prop_assert!(covers_exactly_once(&spans, rows, cols));
        // every pair scored above the threshold ends up inside one cell
        for (q, s) in pairs.iter().zip(&scores) {
            if *s >= thr {
                let owner = |p: (usize, usize)| spans.iter().position(|x| x.contains(p.0, p.1));
                prop_assert_eq!(owner(q.a), owner(q.b));
            }
        }
    }

    #[test]
    fn oracle_labels_reproduce_spans(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spans = random_partition(&mut rng, rows, cols, 0.35);
        let grid = uniform_grid(rows, cols, 0.0, 10.0);
        let pairs = adjacent_pairs(rows, cols);
        let scores: Vec<f64> = oracle_pair_labels(&pairs, &spans)
            .into_iter()
            .map(|l| if l == PairLabel::Positive { 1.0 } else { 0.0 })
            .collect();
        let s = apply_merges(&grid, &pairs, &scores, 0.8);
        prop_assert_eq!(s.spans(), spans);
        prop_assert!(s.validate().is_ok());
    }

    #[test]
    fn teds_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tree(&mut rng, 15);
        let b = random_tree(&mut rng, 15);
        let ab = teds_struct(&a, &b);
        prop_assert!((ab - teds_struct(&b, &a)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(teds_struct(&a, &a), 1.0);
    }

    #[test]
    fn adjacency_of_a_table_with_itself_is_perfect(rows in 1usize..7, cols in 2usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spans = random_partition(&mut rng, rows, cols, 0.3);
        let content = (0..spans.len()).map(|i| vec![i]).collect();
        let t = ContentTable { rows, cols, spans, content };
        let prf = adjacency_prf(&t, &t);
        prop_assert_eq!(prf.f1, 1.0);
    }
}

#[test]
fn pair_scores_ignore_pair_order() {
    let store = ParamStore::new(DType::F64, 4);
    let head = MergeHead::new(&store.root(), 2, &MergeConfig { feature_dim: 8, relation_hidden: 8 }).unwrap();
    let grid = uniform_grid(3, 3, 4.0, 12.0);
    let feats = GridFeatures {
        rows: 3,
        cols: 3,
        tensor: Tensor::randn(0.0, 1.0, (9, 8), &Device::Cpu).unwrap().to_dtype(DType::F64).unwrap(),
        degenerate: Vec::new(),
    };
    let pairs = adjacent_pairs(3, 3);
    let swapped: Vec<CellPair> = pairs.iter().map(|q| CellPair { a: q.b, b: q.a }).collect();
    let x: Vec<f64> = head.score_pairs(&feats, &grid, &pairs).unwrap().to_vec1().unwrap();
    let y: Vec<f64> = head.score_pairs(&feats, &grid, &swapped).unwrap().to_vec1().unwrap();
    assert_eq!(x, y);
}

#[test]
fn structure_tree_of_full_grid() {
    let spans: Vec<Span> = (0..3).flat_map(|r| (0..4).map(move |c| Span::unit(r, c))).collect();
    assert_eq!(StructTree::from_spans(3, &spans).size(), 1 + 3 + 12);
}
