mod common;

use common::grad::{self, TOL};

fn check(errors: Vec<(String, f64)>) {
    for (what, err) in errors {
        assert!(err < TOL, "{what}: relative error {err:e}");
    }
}

#[test]
fn corner_pool() {
    check(grad::corner_pool_errors());
}

#[test]
fn scnn() {
    check(grad::scnn_errors());
}

#[test]
fn roi_align() {
    check(grad::roi_align_errors());
}

#[test]
fn strided_conv() {
    check(grad::strided_conv_errors());
}

#[test]
fn grid_features() {
    check(grad::grid_features_errors());
}

#[test]
fn grid_cnn() {
    check(grad::grid_cnn_errors());
}

#[test]
fn relation_mlp() {
    check(grad::relation_mlp_errors());
}
