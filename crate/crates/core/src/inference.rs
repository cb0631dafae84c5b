//! Forward filtering with discount-implied evolution covariance, backward
//! sampling of whole state trajectories, and the deterministic smoother.
//!
//! Ages are indexed `0..n` for `x1..ϑ`; trajectories carry one extra leading
//! entry for the initial age `x0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::RateSurface;
use crate::distributions::{chol_psd, mvn_sample_factored, psd_solve, symmetrize, JITTER_LADDER};
use crate::error::{Error, Result};
use crate::model::{DiscountSchedule, DlmSpec};

/// How a discount factor turns `P = G C Gᵀ` into the prior covariance `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountMode {
    /// `R = P / δ` on the full joint matrix (cross-population terms inflate too).
    #[default]
    Full,
    /// Only the diagonal blocks of `P` (one per population, one for the
    /// common term) are inflated, so `W` stays block diagonal.
    Block,
}

/// Discount factors resolved to one value per age and state component.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountPlan {
    mode: DiscountMode,
    factors: Vec<DVector<f64>>,
}

impl DiscountPlan {
    /// Looks up every age of `ages` in `schedule`. Components of population
    /// `j` use that population's override when present; the common term uses
    /// the base schedule.
    pub fn resolve(
        spec: &DlmSpec,
        schedule: &DiscountSchedule,
        ages: &[i64],
        populations: &[String],
        mode: DiscountMode,
    ) -> Result<Self> {
        if populations.len() != spec.n_populations() {
            return Err(Error::Domain(format!(
                "{} population ids for a {}-population model",
                populations.len(),
                spec.n_populations()
            )));
        }
        let factors = ages
            .iter()
            .map(|&age| Self::factors_at(spec, schedule, age, populations))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { mode, factors })
    }

    /// Per-component factors at one age.
    pub fn factors_at(
        spec: &DlmSpec,
        schedule: &DiscountSchedule,
        age: i64,
        populations: &[String],
    ) -> Result<DVector<f64>> {
        let p = spec.state_dim();
        let mut out = DVector::zeros(p);
        for i in 0..p {
            let owner = spec.state_owner(i).map(|j| populations[j].as_str());
            out[i] = schedule.discount_at(age, owner)?;
        }
        Ok(out)
    }

    pub fn uniform(delta: f64, n_ages: usize, state_dim: usize, mode: DiscountMode) -> Self {
        Self::from_factors(vec![DVector::from_element(state_dim, delta); n_ages], mode)
    }

    pub fn from_factors(factors: Vec<DVector<f64>>, mode: DiscountMode) -> Self {
        Self { mode, factors }
    }

    pub fn mode(&self) -> DiscountMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factors(&self, age_idx: usize) -> &DVector<f64> {
        &self.factors[age_idx]
    }
}

/// Diagonal blocks used by [`DiscountMode::Block`].
fn discount_blocks(spec: &DlmSpec) -> Vec<std::ops::Range<usize>> {
    let mut blocks: Vec<_> = (0..spec.n_populations())
        .map(|j| 2 * j..2 * j + 2)
        .collect();
    if let Some(c) = spec.common_index() {
        blocks.push(c..c + 1);
    }
    blocks
}

/// Prior covariance `R = P + W` for `P = G C Gᵀ` under the given factors.
pub fn discounted_covariance(
    spec: &DlmSpec,
    p: &DMatrix<f64>,
    factors: &DVector<f64>,
    mode: DiscountMode,
) -> DMatrix<f64> {
    let uniform = factors.iter().all(|&d| d == factors[0]);
    let r = match mode {
        DiscountMode::Full if uniform => p / factors[0],
        DiscountMode::Full => {
            let s = factors.map(|d| 1.0 / d.sqrt());
            DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| s[i] * p[(i, j)] * s[j])
        }
        DiscountMode::Block => {
            let mut r = p.clone();
            for b in discount_blocks(spec) {
                let d = factors[b.start];
                let inflate = (1.0 - d) / d;
                for i in b.clone() {
                    for j in b.clone() {
                        r[(i, j)] += inflate * p[(i, j)];
                    }
                }
            }
            r
        }
    };
    symmetrize(&r)
}

/// Filtering moments at one age.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub age: i64,
    /// Prior mean `a = G m_{x-1}`.
    pub a: DVector<f64>,
    /// Prior covariance `R`.
    pub r: DMatrix<f64>,
    /// One-step forecast mean `f = F a`.
    pub f: DVector<f64>,
    /// One-step forecast covariance `Q = F R Fᵀ + V`.
    pub q: DMatrix<f64>,
    /// Posterior mean.
    pub m: DVector<f64>,
    /// Posterior covariance.
    pub c: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterPass {
    pub m0: DVector<f64>,
    pub c0: DMatrix<f64>,
    pub steps: Vec<FilterStep>,
}

impl FilterPass {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Posterior `(m, C)` at trajectory index `t` (0 is the initial age).
    pub fn posterior(&self, t: usize) -> (&DVector<f64>, &DMatrix<f64>) {
        if t == 0 {
            (&self.m0, &self.c0)
        } else {
            let s = &self.steps[t - 1];
            (&s.m, &s.c)
        }
    }

    pub fn last(&self) -> &FilterStep {
        self.steps.last().expect("filter pass is never empty")
    }
}

/// Sequence of states `θ_{x0..ϑ}`.
pub type StateTrajectory = Vec<DVector<f64>>;

/// Runs the forward recursions over a complete surface.
pub fn forward_filter(
    spec: &DlmSpec,
    y: &RateSurface,
    v: &DMatrix<f64>,
    plan: &DiscountPlan,
) -> Result<FilterPass> {
    let j = spec.n_populations();
    if y.n_populations() != j {
        return Err(Error::Domain(format!(
            "surface has {} populations, model expects {j}",
            y.n_populations()
        )));
    }
    if y.has_missing() {
        return Err(Error::Domain(
            "forward filter needs a complete surface; impute missing cells first".into(),
        ));
    }
    if v.shape() != (j, j) {
        return Err(Error::Domain(format!("V must be {j}x{j}")));
    }
    if plan.len() != y.n_ages() {
        return Err(Error::Domain(format!(
            "discount plan has {} ages, surface has {}",
            plan.len(),
            y.n_ages()
        )));
    }

    let mut steps = Vec::with_capacity(y.n_ages());
    let mut m = spec.m0().clone();
    let mut c = spec.c0().clone();
    for (idx, &age) in y.ages().iter().enumerate() {
        let g = spec.g(age);
        let f_mat = spec.f(age);
        let a = g * &m;
        let p = g * &c * g.transpose();
        let r = discounted_covariance(spec, &p, plan.factors(idx), plan.mode());
        let f = f_mat * &a;
        let q = symmetrize(&(f_mat * &r * f_mat.transpose() + v));
        let chol = q.clone().cholesky().ok_or_else(|| {
            Error::Numerical(format!("forecast covariance Q is singular at age {age}"))
        })?;
        // Aᵀ = Q⁻¹ F R
        let gain_t = chol.solve(&(f_mat * &r));
        let gain = gain_t.transpose();
        let e = y.observation(idx) - &f;
        m = &a + &gain * e;
        c = symmetrize(&(&r - &gain * &q * &gain_t));
        steps.push(FilterStep {
            age,
            a,
            r,
            f,
            q,
            m: m.clone(),
            c: c.clone(),
        });
    }
    Ok(FilterPass {
        m0: spec.m0().clone(),
        c0: spec.c0().clone(),
        steps,
    })
}

/// Backward gain `B_t = C_t Gᵀ R_{t+1}⁻¹` and conditional covariance
/// `H_t = C_t - B_t G C_t` for trajectory index `t < n`.
fn backward_kernel(
    pass: &FilterPass,
    spec: &DlmSpec,
    t: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let next = &pass.steps[t];
    let (_, c) = pass.posterior(t);
    let g = spec.g(next.age);
    let gc = g * c;
    let gain = psd_solve(&next.r, &gc)
        .map_err(|e| e.context(format!("backward gain at age {}", next.age)))?
        .transpose();
    let h = symmetrize(&(c - &gain * &gc));
    Ok((gain, h))
}

/// Draws one trajectory from `p(θ_{x0..ϑ} | y)`.
pub fn backward_sample<R: Rng + ?Sized>(
    pass: &FilterPass,
    spec: &DlmSpec,
    rng: &mut R,
) -> Result<StateTrajectory> {
    let n = pass.len();
    let mut traj = vec![DVector::zeros(spec.state_dim()); n + 1];
    let last = pass.last();
    traj[n] = draw(&last.m, &last.c, &last.c, rng)
        .map_err(|e| e.context(format!("final state at age {}", last.age)))?;
    for t in (0..n).rev() {
        let (gain, h_cov) = backward_kernel(pass, spec, t)?;
        let (m, c) = pass.posterior(t);
        let next = &pass.steps[t];
        let h = m + &gain * (&traj[t + 1] - &next.a);
        traj[t] = draw(&h, &h_cov, c, rng)
            .map_err(|e| e.context(format!("backward draw before age {}", next.age)))?;
    }
    Ok(traj)
}

/// Gaussian draw treating covariances that are negligible next to `reference`
/// as exactly zero (e.g. the `δ = 1` case where `H = 0` up to rounding).
fn draw<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    reference: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let l = if cov.amax() <= 1e-12 * reference.amax() {
        DMatrix::zeros(cov.nrows(), cov.ncols())
    } else {
        chol_psd(cov, JITTER_LADDER[JITTER_LADDER.len() - 1])?.l
    };
    Ok(mvn_sample_factored(mean, &l, rng))
}

/// Smoothed marginal moments of `θ_x | y_{x1..ϑ}`, index 0 for `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMoments {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Rauch-style backward recursion on moments:
/// `s_t = m_t + B_t (s_{t+1} - a_{t+1})`, `S_t = H_t + B_t S_{t+1} B_tᵀ`.
pub fn smooth_moments(pass: &FilterPass, spec: &DlmSpec) -> Result<SmoothedMoments> {
    let n = pass.len();
    let mut means = vec![DVector::zeros(spec.state_dim()); n + 1];
    let mut covs = vec![DMatrix::zeros(spec.state_dim(), spec.state_dim()); n + 1];
    means[n] = pass.last().m.clone();
    covs[n] = pass.last().c.clone();
    for t in (0..n).rev() {
        let (gain, h_cov) = backward_kernel(pass, spec, t)?;
        let (m, _) = pass.posterior(t);
        let next = &pass.steps[t];
        means[t] = m + &gain * (&means[t + 1] - &next.a);
        covs[t] = symmetrize(&(h_cov + &gain * &covs[t + 1] * gain.transpose()));
    }
    Ok(SmoothedMoments { means, covs })
}
