//! Recorded gradients of every differentiable op against central differences.

mod common;

use common::{run_case, CASES, TOLERANCE};

fn check(name: &str) {
    let case = CASES.iter().find(|c| c.name == name).expect("known case");
    let err = run_case(case);
    assert!(err < TOLERANCE, "{name}: relative error {err:.3e}");
}

macro_rules! gradient_tests {
    ($($name:ident),* $(,)?) => {$(
        #[test]
        fn $name() {
            check(stringify!($name));
        }
    )*};
}

gradient_tests!(
    conv2d_same,
    conv2d_valid,
    batch_norm_train,
    batch_norm_eval,
    prelu,
    maxpool2,
    upsample_bilinear2,
    softmax_channels,
    softmax_rows,
    soft_argmax,
    cff,
    mask_ce,
    line_ce,
    line_l1,
    total_loss,
    topology_guarantee,
);

#[test]
fn every_case_has_a_test() {
    assert_eq!(CASES.len(), 16);
}
