//! Test support: a brute-force oracle that builds the joint Gaussian of all
//! states and observations explicitly and conditions it with dense LU
//! solves, plus random instance generators.
#![allow(dead_code)]

use graduate::data::RateSurface;
use graduate::distributions::RngStream;
use graduate::inference::{DiscountMode, DiscountPlan};
use graduate::model::{build_common_term, build_local_linear, DlmSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Moments produced by the oracle, indexed like the filter (`t = 0` is the
/// initial state, `t = 1..=n` the ages).
pub struct OracleMoments {
    /// `E[θ_t | y_1..t-1]`, `Cov[θ_t | y_1..t-1]` for `t = 1..=n` (index t-1).
    pub prior_mean: Vec<DVector<f64>>,
    pub prior_cov: Vec<DMatrix<f64>>,
    /// `E[θ_t | y_1..t]`, `Cov[θ_t | y_1..t]` for `t = 1..=n` (index t-1).
    pub filt_mean: Vec<DVector<f64>>,
    pub filt_cov: Vec<DMatrix<f64>>,
    /// `E[θ_t | y_1..n]`, `Cov[θ_t | y_1..n]` for `t = 0..=n`.
    pub smooth_mean: Vec<DVector<f64>>,
    pub smooth_cov: Vec<DMatrix<f64>>,
}

/// Joint Gaussian over a growing list of scalar variables.
struct Joint {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Joint {
    /// Appends `z = A x_sel + e` with `e ~ N(0, noise)` where `x_sel` are the
    /// variables at `idx`.
    fn push_linear(&mut self, idx: &[usize], a: &DMatrix<f64>, noise: &DMatrix<f64>) -> Vec<usize> {
        let n = self.mean.len();
        let k = a.nrows();
        let mut mean = DVector::zeros(n + k);
        mean.rows_mut(0, n).copy_from(&self.mean);
        let mut cov = DMatrix::zeros(n + k, n + k);
        cov.view_mut((0, 0), (n, n)).copy_from(&self.cov);
        // Cov(z, everything) = A Cov(x_sel, everything)
        let sel_rows = self.cov.select_rows(idx);
        let cross = a * &sel_rows; // k × n
        let sel_mean = self.mean.select_rows(idx);
        mean.rows_mut(n, k).copy_from(&(a * sel_mean));
        cov.view_mut((n, 0), (k, n)).copy_from(&cross);
        cov.view_mut((0, n), (n, k)).copy_from(&cross.transpose());
        let sel_cov = self.cov.select_rows(idx).select_columns(idx);
        cov.view_mut((n, n), (k, k))
            .copy_from(&(a * sel_cov * a.transpose() + noise));
        self.mean = mean;
        self.cov = cov;
        (n..n + k).collect()
    }

    /// Moments of variables `a` given observed values of variables `b`.
    fn condition(&self, a: &[usize], b: &[usize], values: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mu_a = self.mean.select_rows(a);
        let s_aa = self.cov.select_rows(a).select_columns(a);
        if b.is_empty() {
            return (mu_a, s_aa);
        }
        let s_ab = self.cov.select_rows(a).select_columns(b);
        let s_bb = self.cov.select_rows(b).select_columns(b);
        let lu = s_bb.lu();
        let resid = values - self.mean.select_rows(b);
        let mean = mu_a + &s_ab * lu.solve(&resid).expect("observation block invertible");
        let cov = s_aa - &s_ab * lu.solve(&s_ab.transpose()).expect("observation block invertible");
        (mean, (&cov + cov.transpose()) * 0.5)
    }
}

/// Evolution covariance `W` computed from `P = G C Gᵀ` without the library.
fn oracle_w(spec: &DlmSpec, p: &DMatrix<f64>, delta: f64, mode: DiscountMode) -> DMatrix<f64> {
    let inflate = (1.0 - delta) / delta;
    match mode {
        DiscountMode::Full => p * inflate,
        DiscountMode::Block => {
            let mut w = DMatrix::zeros(p.nrows(), p.ncols());
            let mut blocks: Vec<(usize, usize)> =
                (0..spec.n_populations()).map(|j| (2 * j, 2)).collect();
            if spec.common_term() {
                blocks.push((2 * spec.n_populations(), 1));
            }
            for (s, len) in blocks {
                for i in s..s + len {
                    for k in s..s + len {
                        w[(i, k)] = inflate * p[(i, k)];
                    }
                }
            }
            w
        }
    }
}

/// Builds the joint Gaussian age by age. `W_t` depends on
/// `Cov[θ_{t-1} | y_1..t-1]`, which the oracle obtains by conditioning its
/// own joint matrix on every earlier observation.
pub fn oracle(
    spec: &DlmSpec,
    y: &[DVector<f64>],
    v: &DMatrix<f64>,
    deltas: &[f64],
    mode: DiscountMode,
) -> OracleMoments {
    let p = spec.state_dim();
    let mut joint = Joint {
        mean: spec.m0().clone(),
        cov: spec.c0().clone(),
    };
    let mut theta_idx: Vec<Vec<usize>> = vec![(0..p).collect()];
    let mut y_idx: Vec<usize> = Vec::new();
    let mut y_vals: Vec<f64> = Vec::new();
    let mut out = OracleMoments {
        prior_mean: Vec::new(),
        prior_cov: Vec::new(),
        filt_mean: Vec::new(),
        filt_cov: Vec::new(),
        smooth_mean: Vec::new(),
        smooth_cov: Vec::new(),
    };
    let g = spec.g(0).clone();
    let f = spec.f(0).clone();
    for (t, yt) in y.iter().enumerate() {
        let prev = theta_idx[t].clone();
        let (_, c_prev) = joint.condition(&prev, &y_idx, &DVector::from_vec(y_vals.clone()));
        let pmat = &g * &c_prev * g.transpose();
        let w = oracle_w(spec, &pmat, deltas[t], mode);
        let th = joint.push_linear(&prev, &g, &w);
        let (a, r) = joint.condition(&th, &y_idx, &DVector::from_vec(y_vals.clone()));
        out.prior_mean.push(a);
        out.prior_cov.push(r);
        let yi = joint.push_linear(&th, &f, v);
        y_idx.extend(&yi);
        y_vals.extend(yt.iter());
        let (m, c) = joint.condition(&th, &y_idx, &DVector::from_vec(y_vals.clone()));
        out.filt_mean.push(m);
        out.filt_cov.push(c);
        theta_idx.push(th);
    }
    let all = DVector::from_vec(y_vals);
    for idx in &theta_idx {
        let (m, c) = joint.condition(idx, &y_idx, &all);
        out.smooth_mean.push(m);
        out.smooth_cov.push(c);
    }
    out
}

/// Random small filtering problem.
pub struct Instance {
    pub spec: DlmSpec,
    pub surface: RateSurface,
    pub y: Vec<DVector<f64>>,
    pub v: DMatrix<f64>,
    pub deltas: Vec<f64>,
    pub mode: DiscountMode,
}

impl Instance {
    pub fn plan(&self) -> DiscountPlan {
        let p = self.spec.state_dim();
        DiscountPlan::from_factors(
            self.deltas.iter().map(|&d| DVector::from_element(p, d)).collect(),
            self.mode,
        )
    }
}

pub fn random_spd(j: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let a = DMatrix::from_fn(j, j, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() * 0.2 + DMatrix::identity(j, j) * rng.random_range(0.01..0.2)
}

pub fn random_instance(seed: u64, common_term: bool, mode: DiscountMode) -> Instance {
    let mut rng = RngStream::new(seed);
    let j = rng.random_range(1..=2usize);
    let n = rng.random_range(4..=6usize);
    let base = if common_term && j == 2 {
        build_common_term(j).unwrap()
    } else {
        build_local_linear(j).unwrap()
    };
    let p = base.state_dim();
    let m0 = DVector::from_fn(p, |i, _| if i % 2 == 0 { rng.random_range(-6.0..-2.0) } else { rng.random_range(-0.2..0.2) });
    let c0 = random_spd(p, &mut rng) * 5.0;
    let spec = base.with_initial_prior(m0, c0).unwrap();
    let v = random_spd(j, &mut rng);
    let deltas: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.0)).collect();
    let values = DMatrix::from_fn(n, j, |a, _| -5.0 + 0.1 * a as f64 + rng.random_range(-0.5..0.5));
    let y = (0..n).map(|a| values.row(a).transpose()).collect();
    let surface = RateSurface::new((0..j).map(|k| format!("p{k}")).collect(), 1, values, None).unwrap();
    Instance {
        spec,
        surface,
        y,
        v,
        deltas,
        mode,
    }
}

pub fn max_abs_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
