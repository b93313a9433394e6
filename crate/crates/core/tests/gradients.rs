mod common;

use common::*;

fn assert_check(c: GradCheck) {
    assert!(
        c.passed(),
        "{}: max relative error {:.3e} over {} instances",
        c.name,
        c.max_rel,
        c.instances
    );
}

#[test]
fn ce_matches_finite_differences() {
    assert_check(check_ce(24));
}

#[test]
fn dfl_matches_finite_differences() {
    for gamma in [0.0, 0.5, 1.0, 2.0, 3.5] {
        assert_check(check_dfl(gamma, 24));
    }
}

#[test]
fn poe_end_to_end_matches_finite_differences() {
    assert_check(check_poe_end_to_end(24));
}

#[test]
fn confreg_distillation_matches_finite_differences() {
    assert_check(check_confreg(24));
}

#[test]
fn probe_ce_matches_finite_differences() {
    assert_check(check_probe(40));
}
