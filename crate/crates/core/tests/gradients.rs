//! Analytic gradients of every training loss against central differences.

mod common;

use common::{
    execute_case, explicit_guide_case, grad_ok, value_case, value_input_case, weighted_guide_case, GradCheck, GRAD_BATCHES,
    GRAD_SEEDS,
};
use por_core::ValueObjective;

fn sweep(name: &str, case: impl Fn(u64, usize) -> GradCheck) {
    for seed in 0..GRAD_SEEDS {
        for bs in GRAD_BATCHES {
            let c = case(seed, bs);
            assert!(grad_ok(&c), "{name} seed {seed} batch {bs}: {c:?}");
        }
    }
}

#[test]
fn expectile_value_loss() {
    sweep("expectile value", |s, b| value_case(ValueObjective::Expectile, s, b));
}

#[test]
fn sparse_value_loss() {
    sweep("sparse value", |s, b| value_case(ValueObjective::Sparse, s, b));
}

#[test]
fn weighted_guide_loss() {
    sweep("weighted guide", weighted_guide_case);
}

#[test]
fn explicit_guide_loss() {
    sweep("explicit guide", explicit_guide_case);
}

#[test]
fn execute_loss_plain_and_weighted() {
    sweep("execute", execute_case);
}

#[test]
fn value_input_gradient() {
    for seed in 0..GRAD_SEEDS {
        let c = value_input_case(seed);
        assert!(grad_ok(&c), "value input seed {seed}: {c:?}");
    }
}
