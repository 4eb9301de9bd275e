//! Central finite differences against reverse-mode gradients.

mod common;

use common::cases::SUITE;
use common::{worst_gradient_error, GRAD_TOL};

fn check(name: &str) {
    let (_, make) = SUITE.iter().find(|(n, _)| *n == name).expect("case registered");
    let err = worst_gradient_error(*make);
    assert!(err < GRAD_TOL, "{name}: relative error {err:e}");
}

#[test]
fn conv2d_gradients() {
    check("conv2d");
}

#[test]
fn max_pool_gradients() {
    check("max_pool2d");
}

#[test]
fn adaptive_avg_pool_gradients() {
    check("adaptive_avg_pool2d");
}

#[test]
fn dense_gradients() {
    check("dense");
}

#[test]
fn stats_pool_gradients() {
    check("stats_pool");
}

#[test]
fn sigmoid_gradients() {
    check("sigmoid");
}

#[test]
fn relu_gradients() {
    check("relu");
}

#[test]
fn splice_gradients() {
    check("splice_dense");
}

#[test]
fn scaled_similarity_gradients() {
    check("scaled_similarity");
}

#[test]
fn ge2e_gradients() {
    check("ge2e_style_loss");
}

#[test]
fn softmax_xent_gradients() {
    check("softmax_xent");
}

#[test]
fn composite_network_gradients() {
    check("conv-relu-pool-dense");
}

#[test]
fn suite_covers_every_case() {
    assert_eq!(SUITE.len(), 12);
}
