use graduate::distributions::{mvn_sample, RngStream};
use graduate::forecast::{
    blend_convergence, extrapolate, summarize_predictive, ForecastConfig, PredictiveDraws, Scale,
};
use graduate::inference::DiscountMode;
use graduate::model::{build_local_linear, DlmSpec};
use graduate::sampler::{DrawsMeta, GibbsConfig, Interval, PosteriorDraws};
use graduate::stats::{mean, quantiles, variance};
use nalgebra::{DMatrix, DVector};

/// `copies` identical draws with the given last state, last filtered
/// covariance and observational covariance; ages `1..=n`.
fn replicated_draws(
    spec: &DlmSpec,
    pops: &[&str],
    n: usize,
    theta_last: &DVector<f64>,
    c_last: &DMatrix<f64>,
    v: &DMatrix<f64>,
    copies: usize,
) -> PosteriorDraws {
    let p = spec.state_dim();
    let j = pops.len();
    let mut theta = DMatrix::zeros(n + 1, p);
    theta.set_row(n, &theta_last.transpose());
    let y_rep = DMatrix::from_fn(n, j, |_, k| theta_last[2 * k]);
    PosteriorDraws {
        populations: pops.iter().map(|s| s.to_string()).collect(),
        ages: (1..=n as i64).collect(),
        state_dim: p,
        missing_cells: Vec::new(),
        theta: vec![theta; copies],
        phi: vec![v.clone(); copies],
        v: vec![v.clone(); copies],
        y_miss: vec![DVector::zeros(0); copies],
        y_rep: vec![y_rep; copies],
        c_last: vec![c_last.clone(); copies],
        chain: vec![0; copies],
        meta: DrawsMeta {
            config: GibbsConfig::default(),
            checks: Vec::new(),
            diagnostics: Vec::new(),
        },
    }
}

#[test]
fn unit_discount_extrapolates_straight_lines() {
    let spec = build_local_linear(2).unwrap();
    let theta = DVector::from_vec(vec![-3.0, 0.09, -3.4, 0.1]);
    let c = DMatrix::identity(4, 4) * 0.01;
    let draws = replicated_draws(&spec, &["a", "b"], 5, &theta, &c, &DMatrix::zeros(2, 2), 3);
    let factors = DVector::from_element(4, 1.0);
    let pred = extrapolate(
        &draws,
        &spec,
        &factors,
        DiscountMode::Full,
        &ForecastConfig::new(12),
        &mut RngStream::new(1),
    )
    .unwrap();
    for m in &pred.values {
        for h in 0..12 {
            let expect_a = -3.0 + 0.09 * (h + 1) as f64;
            let expect_b = -3.4 + 0.1 * (h + 1) as f64;
            assert!((m[(h, 0)] - expect_a).abs() < 1e-12);
            assert!((m[(h, 1)] - expect_b).abs() < 1e-12);
        }
    }
}

#[test]
fn one_step_predictive_variance() {
    let spec = build_local_linear(1).unwrap();
    let theta = DVector::from_vec(vec![-2.0, 0.1]);
    let c = DMatrix::from_row_slice(2, 2, &[0.02, 0.004, 0.004, 0.003]);
    let v = DMatrix::from_element(1, 1, 0.01);
    let delta = 0.9;
    let n_draws = 100_000;
    let mut draws = replicated_draws(&spec, &["a"], 4, &theta, &c, &v, n_draws);
    // θ_ϑ varies across draws as N(m, C), as it would under the filter posterior.
    let mut rng = RngStream::new(20);
    for th in draws.theta.iter_mut() {
        let s = mvn_sample(&theta, &c, &mut rng).unwrap();
        th.set_row(4, &s.transpose());
    }
    let pred = extrapolate(
        &draws,
        &spec,
        &DVector::from_element(2, delta),
        DiscountMode::Full,
        &ForecastConfig::new(1),
        &mut RngStream::new(2),
    )
    .unwrap();
    let ys: Vec<f64> = pred.values.iter().map(|m| m[(0, 0)]).collect();
    // F (G C Gᵀ / δ) Fᵀ + V with F = (1, 0), G = [[1,1],[0,1]].
    let gcg00 = c[(0, 0)] + 2.0 * c[(0, 1)] + c[(1, 1)];
    let analytic = gcg00 / delta + v[(0, 0)];
    let var = variance(&ys);
    // Relative standard error of a normal sample variance is √(2/(n-1)).
    let rel_se = (2.0 / (n_draws as f64 - 1.0)).sqrt();
    assert!((var / analytic - 1.0).abs() < 4.0 * rel_se, "{var} vs {analytic}");
    let se_mean = (analytic / n_draws as f64).sqrt();
    assert!((mean(&ys) - (-1.9)).abs() < 4.0 * se_mean);
}

#[test]
fn interval_width_grows_with_horizon() {
    let spec = build_local_linear(1).unwrap();
    let theta = DVector::from_vec(vec![-2.0, 0.1]);
    let c = DMatrix::from_row_slice(2, 2, &[0.01, 0.001, 0.001, 0.0005]);
    let v = DMatrix::from_element(1, 1, 0.004);
    let draws = replicated_draws(&spec, &["a"], 4, &theta, &c, &v, 20_000);
    let pred = extrapolate(
        &draws,
        &spec,
        &DVector::from_element(2, 0.95),
        DiscountMode::Full,
        &ForecastConfig::new(10),
        &mut RngStream::new(3),
    )
    .unwrap();
    let widths: Vec<f64> = (0..10)
        .map(|h| {
            let ys: Vec<f64> = pred.values.iter().map(|m| m[(h, 0)]).collect();
            let q = quantiles(&ys, &[0.025, 0.975]);
            q[1] - q[0]
        })
        .collect();
    for w in widths.windows(2) {
        assert!(w[1] >= w[0], "{widths:?}");
    }
}

#[test]
fn block_mode_with_diagonal_v_matches_independent_extrapolations() {
    let joint = build_local_linear(2).unwrap();
    let uni = build_local_linear(1).unwrap();
    let theta = DVector::from_vec(vec![-3.0, 0.08, -3.5, 0.1]);
    let mut c = DMatrix::zeros(4, 4);
    let blocks = [
        DMatrix::from_row_slice(2, 2, &[0.02, 0.003, 0.003, 0.002]),
        DMatrix::from_row_slice(2, 2, &[0.03, 0.004, 0.004, 0.001]),
    ];
    c.view_mut((0, 0), (2, 2)).copy_from(&blocks[0]);
    c.view_mut((2, 2), (2, 2)).copy_from(&blocks[1]);
    let v = DMatrix::from_diagonal(&DVector::from_vec(vec![0.004, 0.006]));
    let n = 40_000;
    let config = ForecastConfig::new(6);
    let joint_draws = replicated_draws(&joint, &["a", "b"], 3, &theta, &c, &v, n);
    let jp = extrapolate(
        &joint_draws,
        &joint,
        &DVector::from_element(4, 0.9),
        DiscountMode::Block,
        &config,
        &mut RngStream::new(4),
    )
    .unwrap();
    for k in 0..2 {
        let th = theta.rows(2 * k, 2).into_owned();
        let vk = DMatrix::from_element(1, 1, v[(k, k)]);
        let d = replicated_draws(&uni, &["x"], 3, &th, &blocks[k], &vk, n);
        let up = extrapolate(
            &d,
            &uni,
            &DVector::from_element(2, 0.9),
            DiscountMode::Block,
            &config,
            &mut RngStream::new(40 + k as u64),
        )
        .unwrap();
        for h in 0..6 {
            let a: Vec<f64> = jp.values.iter().map(|m| m[(h, k)]).collect();
            let b: Vec<f64> = up.values.iter().map(|m| m[(h, 0)]).collect();
            let se = ((variance(&a) + variance(&b)) / n as f64).sqrt();
            assert!((mean(&a) - mean(&b)).abs() < 4.0 * se, "pop {k} h {h}");
            let rel_se = (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((variance(&a) / variance(&b) - 1.0).abs() < 6.0 * rel_se, "pop {k} h {h}");
        }
    }
    // No cross-population dependence arises.
    let a: Vec<f64> = jp.values.iter().map(|m| m[(5, 0)]).collect();
    let b: Vec<f64> = jp.values.iter().map(|m| m[(5, 1)]).collect();
    let (ma, mb) = (mean(&a), mean(&b));
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n as f64;
    let corr = cov / (variance(&a) * variance(&b)).sqrt();
    assert!(corr.abs() < 4.0 / (n as f64).sqrt());
}

#[test]
fn quantiles_commute_with_scale_transforms() {
    let spec = build_local_linear(2).unwrap();
    let theta = DVector::from_vec(vec![-3.0, 0.08, -3.5, 0.1]);
    let c = DMatrix::identity(4, 4) * 0.005;
    let v = DMatrix::from_row_slice(2, 2, &[0.01, 0.008, 0.008, 0.01]);
    let draws = replicated_draws(&spec, &["a", "b"], 3, &theta, &c, &v, 500);
    let pred = extrapolate(
        &draws,
        &spec,
        &DVector::from_element(4, 0.9),
        DiscountMode::Full,
        &ForecastConfig::new(30),
        &mut RngStream::new(5),
    )
    .unwrap();
    let s = summarize_predictive(&draws, &pred, Interval::default()).unwrap();
    for r in s.rows.iter().filter(|r| r.scale == Scale::LogRate) {
        for scale in [Scale::Rate, Scale::DeathProb] {
            let t = s.row(&r.population, r.age, scale).unwrap();
            assert_eq!(t.median, scale.transform(r.median));
            assert_eq!(t.lower, scale.transform(r.lower));
            assert_eq!(t.upper, scale.transform(r.upper));
            assert!(t.lower <= t.median && t.median <= t.upper);
        }
        let q = s.row(&r.population, r.age, Scale::DeathProb).unwrap();
        assert!(q.lower > 0.0 && q.upper < 1.0);
    }
    assert_eq!(s.rows.len(), 2 * 33 * 3);
}

#[test]
fn log_rate_example_transforms() {
    let median = -4.60517_f64;
    assert!((Scale::Rate.transform(median) - 0.01).abs() < 1e-6);
    assert!((Scale::DeathProb.transform(median) - 0.0099502).abs() < 1e-6);
}

#[test]
fn degenerate_draws_give_zero_width() {
    let spec = build_local_linear(1).unwrap();
    let theta = DVector::from_vec(vec![-2.0, 0.1]);
    let draws = replicated_draws(
        &spec,
        &["a"],
        3,
        &theta,
        &DMatrix::zeros(2, 2),
        &DMatrix::zeros(1, 1),
        20,
    );
    let pred = extrapolate(
        &draws,
        &spec,
        &DVector::from_element(2, 0.9),
        DiscountMode::Full,
        &ForecastConfig::new(4),
        &mut RngStream::new(6),
    )
    .unwrap();
    let s = summarize_predictive(&draws, &pred, Interval::default()).unwrap();
    for r in &s.rows {
        assert_eq!(r.lower, r.upper);
    }
}

#[test]
fn blending_preserves_cross_population_mean() {
    let values: Vec<DMatrix<f64>> = (0..5)
        .map(|d| DMatrix::from_fn(8, 3, |h, k| -2.0 + 0.1 * h as f64 - 0.3 * k as f64 + 0.01 * d as f64))
        .collect();
    let pred = PredictiveDraws {
        populations: vec!["a".into(), "b".into(), "c".into()],
        ages: (101..=108).collect(),
        values,
    };
    let b = blend_convergence(&pred, 100, 106);
    for (orig, blended) in pred.values.iter().zip(&b.values) {
        for h in 0..8 {
            let m0 = orig.row(h).sum() / 3.0;
            let m1 = blended.row(h).sum() / 3.0;
            assert!((m0 - m1).abs() < 1e-14);
        }
        for h in 5..8 {
            assert_eq!(blended[(h, 0)], blended[(h, 1)]);
            assert_eq!(blended[(h, 1)], blended[(h, 2)]);
        }
    }
}
