mod common;

use bulkspace::error::Error;
use bulkspace::optim::{clip_global_norm, Hyperparams, LrSchedule, OptimizerKind, OptimizerState};
use bulkspace::problems::{log_spaced, QuadraticProblem};
use common::*;
use proptest::prelude::*;

fn hyper(lr: f64) -> Hyperparams {
    Hyperparams {
        lr,
        ..Hyperparams::default()
    }
}

fn add(theta: &mut [f64], v: &[f64]) {
    theta.iter_mut().zip(v).for_each(|(t, d)| *t += d);
}

#[test]
fn gradient_descent_is_monotone_below_the_stability_limit() {
    let q = QuadraticProblem::with_random_rotation(log_spaced(30, 10.0, 0.01), 1).unwrap();
    let mut opt = OptimizerState::new(OptimizerKind::Sgd, hyper(0.19), 30).unwrap();
    let mut theta = gaussian_vec(30, &mut rng(2));
    let mut last = q.loss(&theta).unwrap();
    for _ in 0..200 {
        let g = q.quadratic_grad(&theta).unwrap();
        let v = opt.compute_update(&g, &theta).unwrap();
        add(&mut theta, &v);
        let now = q.loss(&theta).unwrap();
        assert!(now <= last);
        last = now;
    }
}

#[test]
fn two_momentum_steps_with_a_fixed_gradient() {
    let (lr, mu) = (0.1, 0.9);
    let h = Hyperparams {
        lr,
        momentum: mu,
        ..Hyperparams::default()
    };
    let mut opt = OptimizerState::new(OptimizerKind::Sgdm, h, 3).unwrap();
    let g = [1.0, -2.0, 0.5];
    let theta = [0.0; 3];
    let first = opt.compute_update(&g, &theta).unwrap();
    let second = opt.compute_update(&g, &theta).unwrap();
    for i in 0..3 {
        assert_eq!(first[i], -lr * g[i]);
        assert!((second[i] + lr * (1.0 + mu) * g[i]).abs() <= 1e-15);
    }
}

#[test]
fn adamw_matches_a_scalar_reference() {
    let h = Hyperparams {
        lr: 0.01,
        beta1: 0.9,
        beta2: 0.99,
        eps: 1e-8,
        weight_decay: 0.1,
        ..Hyperparams::default()
    };
    let grads = [[0.3, -1.0], [0.1, 2.0], [-0.4, 0.5], [0.2, 0.2]];
    let mut opt = OptimizerState::new(OptimizerKind::Adamw, h, 2).unwrap();
    let mut theta = vec![1.0, -0.5];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        let mut want = [0.0; 2];
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.99 * v[i] + 0.01 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.99f64.powi(t));
            want[i] = -0.01 * (mh / (vh.sqrt() + 1e-8) + 0.1 * theta[i]);
        }
        let got = opt.compute_update(g, &theta).unwrap();
        assert!(max_abs_diff(&got, &want) <= 1e-15);
        add(&mut theta, &got);
    }
}

#[test]
fn adamw_decays_weights_at_zero_gradient() {
    let h = Hyperparams {
        lr: 0.1,
        weight_decay: 0.5,
        ..Hyperparams::default()
    };
    let mut opt = OptimizerState::new(OptimizerKind::Adamw, h, 2).unwrap();
    let theta = [2.0, -4.0];
    let v = opt.compute_update(&[0.0, 0.0], &theta).unwrap();
    assert_eq!(v, vec![-0.1 * 0.5 * 2.0, 0.1 * 0.5 * 4.0]);
}

#[test]
fn block_scalar_adam_shares_the_second_moment() {
    let h = hyper(0.1);
    let mut opt =
        OptimizerState::with_blocks(OptimizerKind::AdamBlockscalar, h, 4, vec![0..2, 2..4])
            .unwrap();
    // Within a block the first step is m̂ / sqrt(mean g²), so equal-magnitude
    // gradients in a block give equal-magnitude steps.
    let v = opt
        .compute_update(&[3.0, -4.0, 1.0, 1.0], &[0.0; 4])
        .unwrap();
    let rms = (12.5f64).sqrt();
    assert!((v[0] + 0.1 * 3.0 / (rms + 1e-8)).abs() < 1e-12);
    assert!((v[1] - 0.1 * 4.0 / (rms + 1e-8)).abs() < 1e-12);
    assert!((v[2] + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
    assert_eq!(opt.second_moment().len(), 2);
}

#[test]
fn non_finite_gradient_poisons_permanently() {
    let mut opt = OptimizerState::new(OptimizerKind::Sgdm, hyper(0.1), 2).unwrap();
    assert!(matches!(
        opt.compute_update(&[f64::NAN, 0.0], &[0.0; 2]),
        Err(Error::Poisoned(_))
    ));
    assert!(matches!(
        opt.compute_update(&[1.0, 0.0], &[0.0; 2]),
        Err(Error::Poisoned(_))
    ));
}

#[test]
fn schedule_is_continuous_at_the_end_of_warmup() {
    let s = LrSchedule::new(10, 100, 1.0, 0.1).unwrap();
    assert_eq!(s.lr_at(0).unwrap(), 0.1);
    assert_eq!(s.lr_at(9).unwrap(), 1.0);
    assert_eq!(s.lr_at(10).unwrap(), 1.0);
    assert!((s.lr_at(55).unwrap() - 0.55).abs() < 1e-12);
    assert!((s.lr_at(100).unwrap() - 0.1).abs() < 1e-15);
    assert!(matches!(s.lr_at(101), Err(Error::Range(_))));
    assert!(LrSchedule::new(20, 10, 1.0, 0.1).is_err());
}

#[test]
fn clipping_caps_the_norm_and_keeps_direction() {
    let g = [3.0, 4.0];
    assert_eq!(clip_global_norm(&g, 10.0), g.to_vec());
    let c = clip_global_norm(&g, 1.0);
    assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
}

proptest! {
    #[test]
    fn sgd_update_is_linear_in_the_gradient(
        g in prop::collection::vec(-10.0f64..10.0, 1..20),
        a in -5.0f64..5.0,
        lr in 1e-4f64..1.0
    ) {
        let theta = vec![0.0; g.len()];
        let mut o1 = OptimizerState::new(OptimizerKind::Sgd, hyper(lr), g.len()).unwrap();
        let mut o2 = o1.clone();
        let v = o1.compute_update(&g, &theta).unwrap();
        let scaled: Vec<f64> = g.iter().map(|x| a * x).collect();
        let w = o2.compute_update(&scaled, &theta).unwrap();
        for (x, y) in v.iter().zip(&w) {
            prop_assert!((a * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn cosine_schedule_stays_in_range(
        warm in 0u64..50, extra in 1u64..500, hi in 1e-3f64..10.0, frac in 0.0f64..1.0
    ) {
        let s = LrSchedule::new(warm, warm + extra, hi, hi * frac).unwrap();
        let mut prev = f64::INFINITY;
        for t in warm..=warm + extra {
            let lr = s.lr_at(t).unwrap();
            prop_assert!(lr <= hi * (1.0 + 1e-12) && lr >= hi * frac * (1.0 - 1e-12));
            prop_assert!(lr <= prev + 1e-12);
            prev = lr;
        }
    }
}
