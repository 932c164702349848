mod common;

use common::oracles::*;

#[test]
fn gradients() {
    autodiff_matches_finite_differences();
}

#[test]
fn attack_grid() {
    pgd_reaches_grid_maximum_on_linear_models();
}

#[test]
fn attack_box() {
    every_emitted_adversarial_example_respects_the_box();
}

#[test]
fn symmetry_svd() {
    symmetry_metric_matches_dense_svd();
}

#[test]
fn pearson_formula() {
    pearson_matches_direct_formula();
}

#[test]
fn confusion_recount() {
    confusion_matches_recount();
}
