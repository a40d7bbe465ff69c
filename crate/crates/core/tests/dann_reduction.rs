mod common;

use common::*;
use swl_core::training::Method;

#[test]
fn constant_allocator_reproduces_reference_dann() {
    for (seed, eta) in [(1, 0.37), (2, 0.9), (3, 1e-3)] {
        let dev = dann_reduction_deviation(Method::SwlAdapt, Some(eta), 20, seed);
        assert!(dev <= 1e-6, "seed {seed}: deviation {dev:e}");
    }
}

#[test]
fn dann_baseline_is_the_uniform_weight_reduction() {
    let dev = dann_reduction_deviation(Method::Dann, None, 20, 4);
    assert!(dev <= 1e-6, "deviation {dev:e}");
}

#[test]
fn reduction_needs_the_rescaling() {
    // Without the 1/b factor the trajectories separate.
    use swl_core::training::{training_step, Hyperparams, TrainState};
    use swl_core::Architecture;
    let arch = Architecture {
        in_channels: 3,
        window_len: 16,
        n_classes: 3,
        conv_filters: vec![6, 8, 5],
        disc_hidden: vec![7, 7],
        ..Architecture::default()
    };
    let hp = Hyperparams { batch_size: 4, total_steps: 5, ..Hyperparams::default() };
    let mut state = TrainState::<f64>::new(&arch, hp, Method::Dann, 9).unwrap();
    let mut reference = ReferenceDann::new(state.bundle.clone(), 1.0, 5, state.hp.beta);
    let mut r = rng(9);
    for _ in 0..5 {
        let batch = random_batch(&mut r, &arch, 4, 3);
        training_step(&mut state, &batch).unwrap();
        reference.step(&batch);
    }
    assert!(state.bundle.feature.max_abs_diff(&reference.net.feature).unwrap() > 1e-6);
}
