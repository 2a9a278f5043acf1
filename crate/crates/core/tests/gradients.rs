mod common;

use common::{check_op, composed_errors, model_errors, op_errors};
use csg_core::tensor::{sample_gaussian, Tensor};
use proptest::prelude::*;

#[test]
fn every_op_matches_central_differences() {
    for (name, err) in op_errors(1) {
        assert!(err < 1e-6, "{name}: {err:e}");
    }
}

#[test]
fn layers_match_central_differences() {
    for (name, err) in composed_errors(2) {
        assert!(err < 1e-4, "{name}: {err:e}");
    }
}

#[test]
fn model_losses_match_central_differences() {
    for (name, err, checked) in model_errors(0.05, 3) {
        assert!(checked > 0, "{name}: nothing sampled");
        assert!(err < 1e-3, "{name}: {err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_chain_gradient(rows in 1usize..4, inner in 1usize..4, cols in 1usize..4, seed in 0u64..1000) {
        let a: Tensor<f64> = sample_gaussian(&[rows, inner], seed);
        let b: Tensor<f64> = sample_gaussian(&[inner, cols], seed + 1);
        let err = check_op(&[a, b], |v| v[0].matmul(v[1])?.tanh()?.softmax(1));
        prop_assert!(err < 1e-6, "{err:e}");
    }

    #[test]
    fn repeated_use_accumulates(seed in 0u64..1000) {
        let a: Tensor<f64> = sample_gaussian(&[2, 3], seed);
        let err = check_op(&[a], |v| v[0].mul(v[0])?.add(v[0].sigmoid()?)?.sub(v[0]));
        prop_assert!(err < 1e-6, "{err:e}");
    }
}
