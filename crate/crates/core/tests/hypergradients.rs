use std::sync::Arc;

use glocal_core::driver::{run, OuterOptimizer, RunSpec, Schedule, Strategy};
use glocal_core::tangent::{
    local_hypergradient, AdamConfig, HpSource, HyperParams, InnerOptimizer, SgdConfig,
    Transform,
};
use glocal_core::tasks::{
    gaussian_classes, ClassifierTask, LossWeighting, QuadraticTask, ReweightModule, Task,
};
use nalgebra::DVector;

fn classifier(weighting_hidden: Option<usize>) -> (ClassifierTask, HyperParams, InnerOptimizer) {
    let train = Arc::new(gaussian_classes(&[40, 12], 4, 2.0, 1.0, 11).unwrap());
    let val = Arc::new(gaussian_classes(&[15, 15], 4, 2.0, 1.0, 12).unwrap());
    let mut hp = HyperParams::from_values([
        ("lr", Transform::Sigmoid, 0.1),
        ("momentum", Transform::Sigmoid, 0.5),
        ("wd", Transform::Sigmoid, 0.01),
    ])
    .unwrap();
    let weighting = match weighting_hidden {
        Some(h) => LossWeighting::Reweight(ReweightModule::register(&mut hp, h, 4)),
        None => LossWeighting::Mean,
    };
    let task = ClassifierTask::new(&[6], train, val, None, weighting, 16, 3).unwrap();
    let inner = InnerOptimizer::Sgd(SgdConfig {
        lr: HpSource::Learned(0),
        momentum: HpSource::Learned(1),
        weight_decay: HpSource::Learned(2),
    });
    (task, hp, inner)
}

/// Final parameters after `steps` inner steps, plus `Z^T ∇ℓ̃` when tracked.
fn unroll(
    task: &dyn Task,
    hp: &HyperParams,
    inner: &InnerOptimizer,
    steps: u64,
    tangent: bool,
) -> (DVector<f64>, Option<DVector<f64>>) {
    let eval = hp.transform();
    let mut theta = task.initial_params();
    let mut state = inner.init_state(theta.len());
    let mut z = tangent.then(|| inner.init_tangent(theta.len(), hp.len()));
    for step in 0..steps {
        inner
            .step(&mut theta, &mut state, z.as_mut(), &eval, &task.batch(step), task)
            .unwrap();
    }
    let h = z.map(|z| local_hypergradient(&theta, &z, task));
    (theta, h)
}

fn finite_difference(task: &dyn Task, hp: &HyperParams, inner: &InnerOptimizer, steps: u64, i: usize) -> f64 {
    let eps = 1e-5;
    let mut plus = hp.clone();
    let mut minus = hp.clone();
    let mut raw = hp.raw().to_vec();
    raw[i] += eps;
    plus.set_raw(&raw);
    raw[i] -= 2.0 * eps;
    minus.set_raw(&raw);
    let lp = task.val_loss(&unroll(task, &plus, inner, steps, false).0);
    let lm = task.val_loss(&unroll(task, &minus, inner, steps, false).0);
    (lp - lm) / (2.0 * eps)
}

fn assert_matches_fd(task: &dyn Task, hp: &HyperParams, inner: &InnerOptimizer, steps: u64, coords: &[usize]) {
    let h = unroll(task, hp, inner, steps, true).1.unwrap();
    for &i in coords {
        let fd = finite_difference(task, hp, inner, steps, i);
        let err = (h[i] - fd).abs() / fd.abs().max(1e-3);
        assert!(err < 1e-4, "step {steps}, coordinate {i}: tangent {} vs fd {fd}", h[i]);
    }
}

#[test]
fn sgd_tangent_matches_finite_differences() {
    let (task, hp, inner) = classifier(None);
    for steps in [10, 50, 200] {
        assert_matches_fd(&task, &hp, &inner, steps, &[0, 1, 2]);
    }
}

#[test]
fn adam_tangent_matches_finite_differences() {
    let (task, _, _) = classifier(None);
    let hp = HyperParams::from_values([
        ("lr", Transform::Sigmoid, 0.01),
        ("beta1", Transform::Sigmoid, 0.9),
        ("beta2", Transform::Sigmoid, 0.99),
    ])
    .unwrap();
    let inner = InnerOptimizer::Adam(AdamConfig {
        lr: HpSource::Learned(0),
        beta1: HpSource::Learned(1),
        beta2: HpSource::Learned(2),
    });
    for steps in [10, 50] {
        assert_matches_fd(&task, &hp, &inner, steps, &[0, 1, 2]);
    }
}

#[test]
fn reweight_tangent_matches_finite_differences() {
    let (task, hp, inner) = classifier(Some(3));
    let q = hp.len();
    assert_eq!(q, 3 + ReweightModule::param_count(3));
    assert_matches_fd(&task, &hp, &inner, 50, &[0, 3, 7, q - 1]);
}

#[test]
fn driver_local_hypergradient_over_full_run_is_exact() {
    let (task, hp, inner) = classifier(None);
    let spec = RunSpec {
        strategy: Strategy::Local,
        schedule: Schedule {
            total_steps: 60,
            tau: 60,
            sigma: 20,
            delay_m: 2,
            ..Schedule::default()
        },
        inner,
        outer: OuterOptimizer::default(),
    };
    let log = run(&task, &hp, &spec).unwrap();
    let h = &log.outer[0].hypergrad;
    for i in 0..3 {
        let fd = finite_difference(&task, &hp, &inner, 60, i);
        assert!((h[i] - fd).abs() < 1e-4 * fd.abs().max(1e-3), "{i}: {} vs {fd}", h[i]);
    }
}

#[test]
fn learning_hyperparameters_beats_frozen_ones_on_quadratic() {
    let task = QuadraticTask::random(8, 0.1, 1.0, 5).unwrap();
    let hp = HyperParams::from_values([
        ("lr", Transform::Sigmoid, 0.05),
        ("wd", Transform::Sigmoid, 0.2),
    ])
    .unwrap();
    let inner = InnerOptimizer::Sgd(SgdConfig {
        lr: HpSource::Learned(0),
        momentum: HpSource::Fixed(0.0),
        weight_decay: HpSource::Learned(1),
    });
    let spec = |strategy| RunSpec {
        strategy,
        schedule: Schedule {
            total_steps: 1000,
            ..Schedule::default()
        },
        inner,
        outer: OuterOptimizer::default(),
    };
    let frozen = run(&task, &hp, &spec(Strategy::NoHpo)).unwrap();
    for strategy in [Strategy::Local, Strategy::Glocal] {
        let learned = run(&task, &hp, &spec(strategy)).unwrap();
        let (l, f) = (learned.metric("val_loss").unwrap(), frozen.metric("val_loss").unwrap());
        assert!(l < f, "{strategy:?}: {l} vs frozen {f}");
    }
}
