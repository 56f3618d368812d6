//! Fast implementations checked against slow reference versions.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabstruct::metrics::{teds_struct, tree_edit_distance, StructTree};

use common::suites;
use common::{random_partition, ted_memo};

#[test]
fn nms_matches_pairwise_definition() {
    assert_eq!(suites::nms_mismatches(1000), 0);
}

#[test]
fn adjacency_matches_brute_force() {
    assert_eq!(suites::adjacency_mismatches(500), 0);
}

#[test]
fn ted_matches_memoized_recursion() {
    assert_eq!(suites::ted_mismatches(200), 0);
}

#[test]
fn corner_decoding_matches_peak_scan() {
    assert_eq!(suites::corner_decode_mismatches(300), 0);
}

#[test]
fn teds_on_table_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (r1, c1) = (rng.random_range(1..4), rng.random_range(1..4));
        let (r2, c2) = (rng.random_range(1..4), rng.random_range(1..4));
        let a = StructTree::from_spans(r1, &random_partition(&mut rng, r1, c1, 0.3));
        let b = StructTree::from_spans(r2, &random_partition(&mut rng, r2, c2, 0.3));
        let d = ted_memo(&a, &b);
        assert_eq!(tree_edit_distance(&a, &b), d);
        let want = 1.0 - d as f64 / a.size().max(b.size()) as f64;
        assert!((teds_struct(&a, &b) - want).abs() < 1e-12);
    }
}
