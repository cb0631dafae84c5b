mod common;

use common::{max_abs_diff, max_abs_diff_vec, oracle, random_instance};
use graduate::data::RateSurface;
use graduate::distributions::RngStream;
use graduate::inference::{
    backward_sample, forward_filter, smooth_moments, DiscountMode, DiscountPlan,
};
use graduate::model::{build_common_term, build_local_linear};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn filter_and_smoother_match_oracle_full_mode() {
    for seed in 0..30 {
        let inst = random_instance(seed, seed % 3 == 0, DiscountMode::Full);
        let pass = forward_filter(&inst.spec, &inst.surface, &inst.v, &inst.plan()).unwrap();
        let sm = smooth_moments(&pass, &inst.spec).unwrap();
        let o = oracle(&inst.spec, &inst.y, &inst.v, &inst.deltas, inst.mode);
        for (t, s) in pass.steps.iter().enumerate() {
            assert!(max_abs_diff_vec(&s.a, &o.prior_mean[t]) < 1e-8, "seed {seed} a_{t}");
            assert!(max_abs_diff(&s.r, &o.prior_cov[t]) < 1e-8, "seed {seed} R_{t}");
            assert!(max_abs_diff_vec(&s.m, &o.filt_mean[t]) < 1e-8, "seed {seed} m_{t}");
            assert!(max_abs_diff(&s.c, &o.filt_cov[t]) < 1e-8, "seed {seed} C_{t}");
        }
        for t in 0..sm.means.len() {
            assert!(max_abs_diff_vec(&sm.means[t], &o.smooth_mean[t]) < 1e-8, "seed {seed} s_{t}");
            assert!(max_abs_diff(&sm.covs[t], &o.smooth_cov[t]) < 1e-8, "seed {seed} S_{t}");
        }
    }
}

#[test]
fn block_mode_matches_oracle() {
    for seed in 100..115 {
        let inst = random_instance(seed, true, DiscountMode::Block);
        let pass = forward_filter(&inst.spec, &inst.surface, &inst.v, &inst.plan()).unwrap();
        let sm = smooth_moments(&pass, &inst.spec).unwrap();
        let o = oracle(&inst.spec, &inst.y, &inst.v, &inst.deltas, inst.mode);
        for (t, s) in pass.steps.iter().enumerate() {
            assert!(max_abs_diff(&s.c, &o.filt_cov[t]) < 1e-8, "seed {seed}");
            assert!(max_abs_diff_vec(&s.m, &o.filt_mean[t]) < 1e-8, "seed {seed}");
        }
        for t in 0..sm.means.len() {
            assert!(max_abs_diff_vec(&sm.means[t], &o.smooth_mean[t]) < 1e-8, "seed {seed}");
        }
    }
}

#[test]
fn one_step_scalar_example() {
    // J=1 local linear, m0=(0,0), C0=I, δ=0.5, V=1, y=1:
    // P = G C0 Gᵀ = [[2,1],[1,1]], R = 2P, Q = 4+1 = 5, A = (4,2)/5.
    let spec = build_local_linear(1)
        .unwrap()
        .with_initial_prior(DVector::zeros(2), DMatrix::identity(2, 2))
        .unwrap();
    let y = RateSurface::new(vec!["p".into()], 1, DMatrix::from_element(1, 1, 1.0), None).unwrap();
    let plan = DiscountPlan::uniform(0.5, 1, 2, DiscountMode::Full);
    let pass = forward_filter(&spec, &y, &DMatrix::identity(1, 1), &plan).unwrap();
    let s = &pass.steps[0];
    assert_eq!(s.q[(0, 0)], 5.0);
    assert!((s.m[0] - 0.8).abs() < 1e-15 && (s.m[1] - 0.4).abs() < 1e-15);
    // C = R - A Q Aᵀ = [[4,2],[2,2]] - [[16,8],[8,4]]/5
    assert!((s.c[(0, 0)] - 0.8).abs() < 1e-14);
    assert!((s.c[(0, 1)] - 0.4).abs() < 1e-14);
    assert!((s.c[(1, 1)] - 1.2).abs() < 1e-14);
}

#[test]
fn backward_samples_are_reproducible_and_vary_with_seed() {
    let inst = random_instance(7, false, DiscountMode::Full);
    let pass = forward_filter(&inst.spec, &inst.surface, &inst.v, &inst.plan()).unwrap();
    let a = backward_sample(&pass, &inst.spec, &mut RngStream::new(1)).unwrap();
    let b = backward_sample(&pass, &inst.spec, &mut RngStream::new(1)).unwrap();
    let c = backward_sample(&pass, &inst.spec, &mut RngStream::new(2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn common_term_enters_every_observation() {
    let spec = build_common_term(2).unwrap();
    let theta = DVector::from_vec(vec![-3.0, 0.1, -4.0, 0.2, 0.5]);
    let fitted = spec.f(10) * &theta;
    assert_eq!(fitted, DVector::from_vec(vec![-2.5, -3.5]));
    let next = spec.g(10) * &theta;
    // α_x = α_{x-1} + Σ μ_{x-1}
    assert_eq!(next[4], 0.5 - 3.0 - 4.0);
    assert_eq!(next[0], -2.9);
    assert_eq!(next[1], 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_recursions_per_population(
        levels in prop::collection::vec(-8.0f64..0.0, 3),
        slopes in prop::collection::vec(-0.2f64..0.2, 3),
        alpha in -1.0f64..1.0,
    ) {
        let spec = build_common_term(3).unwrap();
        let mut theta = DVector::zeros(7);
        for j in 0..3 {
            theta[2 * j] = levels[j];
            theta[2 * j + 1] = slopes[j];
        }
        theta[6] = alpha;
        let next = spec.g(0) * &theta;
        let y = spec.f(0) * &theta;
        for j in 0..3 {
            prop_assert_eq!(next[2 * j], levels[j] + slopes[j]);
            prop_assert_eq!(next[2 * j + 1], slopes[j]);
            prop_assert_eq!(y[j], levels[j] + alpha);
        }
        prop_assert!((next[6] - (alpha + levels.iter().sum::<f64>())).abs() < 1e-12);
    }

    #[test]
    fn marginal_block_is_univariate_model(j in 1usize..5, k in 0usize..4) {
        prop_assume!(k < j);
        let joint = build_local_linear(j).unwrap();
        let uni = build_local_linear(1).unwrap();
        let idx = [2 * k, 2 * k + 1];
        let g = joint.g(0).select_rows(&idx).select_columns(&idx);
        let f = joint.f(0).select_rows(&[k]).select_columns(&idx);
        prop_assert_eq!(&g, uni.g(0));
        prop_assert_eq!(&f, uni.f(0));
    }

    #[test]
    fn filter_covariances_symmetric_and_shrink(seed in 0u64..10_000) {
        let inst = random_instance(seed, seed % 2 == 0, DiscountMode::Full);
        let pass = forward_filter(&inst.spec, &inst.surface, &inst.v, &inst.plan()).unwrap();
        for s in &pass.steps {
            prop_assert_eq!(&s.c, &s.c.transpose());
            prop_assert_eq!(&s.r, &s.r.transpose());
            for i in 0..s.c.nrows() {
                prop_assert!(s.c[(i, i)] <= s.r[(i, i)] * (1.0 + 1e-12));
                prop_assert!(s.c[(i, i)] >= -1e-10);
            }
        }
    }
}
