//! Analytic gradients against central finite differences.

mod common;

use common::fd::{full_objective_error, pose_loss_error, primitive_errors, TOLERANCE};

fn check(name: &str, err: f64) {
    assert!(err < TOLERANCE, "{name}: max relative error {err:e}");
}

#[test]
fn every_primitive() {
    let errs = primitive_errors();
    assert!(errs.len() >= 28);
    for (name, err) in errs {
        check(name, err);
    }
}

#[test]
fn pose_loss_through_normalization() {
    check("pose loss", pose_loss_error());
}

#[test]
fn shape_objective_all_parameters() {
    check("shape objective", full_objective_error(1));
}

#[test]
fn pose_objective_all_parameters() {
    check("pose objective", full_objective_error(2));
}

#[test]
fn joint_objective_all_parameters() {
    check("joint objective", full_objective_error(3));
}
