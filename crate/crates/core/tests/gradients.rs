//! Analytic gradients of the full training loss against central finite
//! differences, for every trainable network and several variants.

mod common;

use common::{gradient_errors, GRAD_CASES, GRAD_SEEDS, GRAD_TOLERANCE};

fn run_case(index: usize) {
    let (ablation, mode, expected) = GRAD_CASES[index];
    for seed in 0..GRAD_SEEDS {
        let errs = gradient_errors(ablation, mode, seed);
        for net in expected {
            let (_, touched) = errs.get(*net).unwrap_or_else(|| panic!("{net} has no parameters"));
            assert!(touched, "{} seed {seed}: {net} received no gradient", ablation.name());
        }
        for (net, (err, _)) in &errs {
            assert!(*err < GRAD_TOLERANCE, "{} seed {seed}: {net} max relative error {err:.3e}", ablation.name());
        }
    }
}

#[test]
fn full_model_attention_mode() {
    run_case(0);
}

#[test]
fn full_model_sum_mode() {
    run_case(1);
}

#[test]
fn refiner_on_detector_features() {
    run_case(2);
}

#[test]
fn without_generator() {
    run_case(3);
}
