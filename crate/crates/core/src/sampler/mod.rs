//! Gibbs sampler: FFBS for the states, a Wishart draw for the observational
//! precision and conditional-normal imputation of missing log-rates.

pub mod archive;
pub mod diagnostics;
mod impute;
pub mod summary;

pub use diagnostics::{effective_sample_size, split_rhat, ParamDiagnostic};
pub use impute::{conditional_normal, impute_missing};
pub use summary::{summarize, Interval, PosteriorSummary, Series, StateRow, SummaryRow, VarianceRow};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::RateSurface;
use crate::distributions::{spd_inverse, RngStream};
use crate::error::{Error, Result};
use crate::inference::{
    backward_sample, forward_filter, DiscountMode, DiscountPlan, StateTrajectory,
};
use crate::model::{DiscountSchedule, DlmSpec, WishartPrior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub block_discount: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            burn_in: 1000,
            thin: 1,
            seed: 20_240_101,
            chains: 1,
            block_discount: false,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Domain(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Domain("thin must be at least 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::Domain("at least one chain is required".into()));
        }
        Ok(())
    }

    /// Stored draws per chain.
    pub fn kept_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    pub fn discount_mode(&self) -> DiscountMode {
        if self.block_discount {
            DiscountMode::Block
        } else {
            DiscountMode::Full
        }
    }
}

/// Outcome of one runtime invariant check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsMeta {
    pub config: GibbsConfig,
    pub checks: Vec<InvariantCheck>,
    pub diagnostics: Vec<ParamDiagnostic>,
}

impl DrawsMeta {
    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Stored posterior draws, concatenated over chains in chain order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub populations: Vec<String>,
    /// Ages `x1..ϑ`; `theta` rows carry one extra leading row for `x0`.
    pub ages: Vec<i64>,
    pub state_dim: usize,
    /// `(population, age index)` of every missing cell; `y_miss` columns
    /// follow this order.
    pub missing_cells: Vec<(usize, usize)>,
    /// Per draw: `(n_ages + 1) × p` state trajectory.
    pub theta: Vec<DMatrix<f64>>,
    /// Per draw: precision `Φ`.
    pub phi: Vec<DMatrix<f64>>,
    /// Per draw: `V = Φ⁻¹`.
    pub v: Vec<DMatrix<f64>>,
    pub y_miss: Vec<DVector<f64>>,
    /// Per draw: `n_ages × J` replicate of the observations (fresh noise at
    /// observed cells, the imputed value at missing cells).
    pub y_rep: Vec<DMatrix<f64>>,
    /// Per draw: filtered covariance at the last age, seeding extrapolation.
    pub c_last: Vec<DMatrix<f64>>,
    /// Chain index of every draw.
    pub chain: Vec<usize>,
    pub meta: DrawsMeta,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_populations(&self) -> usize {
        self.populations.len()
    }

    /// State at age index `age_idx` (0-based over `x1..ϑ`) for one draw.
    pub fn state(&self, draw: usize, age_idx: usize) -> DVector<f64> {
        self.theta[draw].row(age_idx + 1).transpose()
    }

    /// `F θ_x` for one draw and age index.
    pub fn fitted(&self, spec: &DlmSpec, draw: usize, age_idx: usize) -> DVector<f64> {
        spec.f(self.ages[age_idx]) * self.state(draw, age_idx)
    }

    /// Draws of one chain, in storage order.
    pub fn chain_indices(&self, chain: usize) -> Vec<usize> {
        (0..self.len()).filter(|&d| self.chain[d] == chain).collect()
    }

    pub fn n_chains(&self) -> usize {
        self.chain.iter().max().map_or(0, |c| c + 1)
    }
}

/// Fills missing log-rates by linear interpolation between the nearest
/// observed ages; runs at either end take the nearest observed value.
pub fn initialize_missing(y: &RateSurface) -> Result<RateSurface> {
    let cells = y.missing_cells();
    if cells.is_empty() {
        return Ok(y.clone());
    }
    let mut values = Vec::with_capacity(cells.len());
    for j in 0..y.n_populations() {
        let observed: Vec<usize> = (0..y.n_ages()).filter(|&a| !y.is_missing(a, j)).collect();
        if observed.len() < 2 {
            return Err(Error::Domain(format!(
                "population '{}' has {} observed ages; at least 2 are needed",
                y.populations()[j],
                observed.len()
            )));
        }
        for a in (0..y.n_ages()).filter(|&a| y.is_missing(a, j)) {
            let next = observed.partition_point(|&o| o < a);
            let value = if next == 0 {
                y.value(observed[0], j)
            } else if next == observed.len() {
                y.value(observed[next - 1], j)
            } else {
                let (lo, hi) = (observed[next - 1], observed[next]);
                let w = (a - lo) as f64 / (hi - lo) as f64;
                (1.0 - w) * y.value(lo, j) + w * y.value(hi, j)
            };
            values.push(value);
        }
    }
    Ok(y.with_filled(&cells, &values))
}

/// Residual cross-products `Σ_x (y_x - F θ_x)(y_x - F θ_x)ᵀ`.
pub fn residual_cross_products(
    states: &StateTrajectory,
    y: &RateSurface,
    spec: &DlmSpec,
) -> Result<DMatrix<f64>> {
    if states.len() != y.n_ages() + 1 {
        return Err(Error::Domain(format!(
            "trajectory of length {} does not match {} ages",
            states.len(),
            y.n_ages()
        )));
    }
    let j = y.n_populations();
    let mut ss = DMatrix::zeros(j, j);
    for (idx, &age) in y.ages().iter().enumerate() {
        let e = y.observation(idx) - spec.f(age) * &states[idx + 1];
        ss += &e * e.transpose();
    }
    Ok(ss)
}

/// Draws `Φ ~ W(v0 + n/2, S0 + SS/2)` with `n` the number of ages.
pub fn sample_phi<R: Rng + ?Sized>(
    states: &StateTrajectory,
    y: &RateSurface,
    spec: &DlmSpec,
    prior: &WishartPrior,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let ss = residual_cross_products(states, y, spec)?;
    prior.params().posterior(y.n_ages(), &ss)?.sample(rng)
}

/// Missing coordinates grouped by age: `(age index, mask, y_miss slots)`.
type AgeGaps = Vec<(usize, Vec<bool>, Vec<usize>)>;

fn gaps_by_age(y: &RateSurface, cells: &[(usize, usize)]) -> AgeGaps {
    let mut out: AgeGaps = Vec::new();
    for a in 0..y.n_ages() {
        let mask: Vec<bool> = (0..y.n_populations()).map(|j| y.is_missing(a, j)).collect();
        if mask.iter().any(|&m| m) {
            let slots = (0..y.n_populations())
                .filter(|&j| mask[j])
                .map(|j| cells.iter().position(|&c| c == (j, a)).expect("cell listed"))
                .collect();
            out.push((a, mask, slots));
        }
    }
    out
}

struct ChainOutput {
    theta: Vec<DMatrix<f64>>,
    phi: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    y_miss: Vec<DVector<f64>>,
    y_rep: Vec<DMatrix<f64>>,
    c_last: Vec<DMatrix<f64>>,
    max_asymmetry: f64,
    non_spd_phi: usize,
}

fn run_chain(
    spec: &DlmSpec,
    y: &RateSurface,
    plan: &DiscountPlan,
    config: &GibbsConfig,
    rng: &mut RngStream,
) -> Result<ChainOutput> {
    let cells = y.missing_cells();
    let gaps = gaps_by_age(y, &cells);
    let (n, j, p) = (y.n_ages(), y.n_populations(), spec.state_dim());
    let mut filled = initialize_missing(y)?;
    let mut y_miss = DVector::from_iterator(
        cells.len(),
        cells.iter().map(|&(pop, a)| filled.value(a, pop)),
    );
    let mut phi = spec.wishart().params().mean()?;
    let mut v = spd_inverse(&phi)?;

    let kept = config.kept_per_chain();
    let mut out = ChainOutput {
        theta: Vec::with_capacity(kept),
        phi: Vec::with_capacity(kept),
        v: Vec::with_capacity(kept),
        y_miss: Vec::with_capacity(kept),
        y_rep: Vec::with_capacity(kept),
        c_last: Vec::with_capacity(kept),
        max_asymmetry: 0.0,
        non_spd_phi: 0,
    };

    for it in 0..config.iterations {
        let at = |e: Error| e.context(format!("iteration {it}"));
        let pass = forward_filter(spec, &filled, &v, plan).map_err(at)?;
        let traj = backward_sample(&pass, spec, rng).map_err(at)?;
        phi = sample_phi(&traj, &filled, spec, spec.wishart(), rng).map_err(at)?;
        v = spd_inverse(&phi).map_err(at)?;

        if !gaps.is_empty() {
            for (a, mask, slots) in &gaps {
                let fitted = spec.f(y.ages()[*a]) * &traj[a + 1];
                let obs = filled.observation(*a);
                let draw = impute_missing(&fitted, &v, &obs, mask, rng)
                    .map_err(|e| at(e.context(format!("imputation at age {}", y.ages()[*a]))))?;
                for (k, &slot) in slots.iter().enumerate() {
                    y_miss[slot] = draw[k];
                }
            }
            filled = y.with_filled(&cells, y_miss.as_slice());
        }

        if it >= config.burn_in && (it - config.burn_in).is_multiple_of(config.thin) {
            let theta = DMatrix::from_fn(n + 1, p, |t, i| traj[t][i]);
            let noise = crate::distributions::chol_psd(&v, 0.0).map_err(at)?.l;
            let mut y_rep = DMatrix::zeros(n, j);
            for a in 0..n {
                let fitted = spec.f(y.ages()[a]) * &traj[a + 1];
                let draw = crate::distributions::mvn_sample_factored(&fitted, &noise, rng);
                for k in 0..j {
                    y_rep[(a, k)] = if y.is_missing(a, k) {
                        filled.value(a, k)
                    } else {
                        draw[k]
                    };
                }
            }
            for s in &pass.steps {
                out.max_asymmetry = out.max_asymmetry.max(
                    (&s.c - s.c.transpose()).amax() / s.c.amax().max(f64::MIN_POSITIVE),
                );
            }
            if phi.clone().cholesky().is_none() {
                out.non_spd_phi += 1;
            }
            out.theta.push(theta);
            out.phi.push(phi.clone());
            out.v.push(v.clone());
            out.y_miss.push(y_miss.clone());
            out.y_rep.push(y_rep);
            out.c_last.push(pass.last().c.clone());
        }
    }
    Ok(out)
}

/// Runs `config.chains` independent chains (one thread each, split RNG
/// streams from `config.seed`) and concatenates the stored draws.
pub fn run_gibbs(
    spec: &DlmSpec,
    y: &RateSurface,
    schedule: &DiscountSchedule,
    config: &GibbsConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let plan = DiscountPlan::resolve(
        spec,
        schedule,
        y.ages(),
        y.populations(),
        config.discount_mode(),
    )?;
    run_gibbs_with_plan(spec, y, &plan, config)
}

/// As [`run_gibbs`] with discount factors already resolved per age.
pub fn run_gibbs_with_plan(
    spec: &DlmSpec,
    y: &RateSurface,
    plan: &DiscountPlan,
    config: &GibbsConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    if y.n_populations() != spec.n_populations() {
        return Err(Error::Domain(format!(
            "data has {} populations, model expects {}",
            y.n_populations(),
            spec.n_populations()
        )));
    }
    let root = RngStream::new(config.seed);
    let outputs: Vec<Result<ChainOutput>> = if config.chains == 1 {
        vec![run_chain(spec, y, plan, config, &mut root.split(0))]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..config.chains)
                .map(|c| {
                    let mut rng = root.split(c as u64);
                    scope.spawn(move || run_chain(spec, y, plan, config, &mut rng))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("chain worker panicked"))
                .collect()
        })
    };

    let mut draws = PosteriorDraws {
        populations: y.populations().to_vec(),
        ages: y.ages().to_vec(),
        state_dim: spec.state_dim(),
        missing_cells: y.missing_cells(),
        theta: Vec::new(),
        phi: Vec::new(),
        v: Vec::new(),
        y_miss: Vec::new(),
        y_rep: Vec::new(),
        c_last: Vec::new(),
        chain: Vec::new(),
        meta: DrawsMeta {
            config: config.clone(),
            checks: Vec::new(),
            diagnostics: Vec::new(),
        },
    };
    let mut max_asymmetry: f64 = 0.0;
    let mut non_spd = 0;
    for (c, out) in outputs.into_iter().enumerate() {
        let out = out.map_err(|e| e.context(format!("chain {c}")))?;
        max_asymmetry = max_asymmetry.max(out.max_asymmetry);
        non_spd += out.non_spd_phi;
        draws.chain.extend(std::iter::repeat_n(c, out.theta.len()));
        draws.theta.extend(out.theta);
        draws.phi.extend(out.phi);
        draws.v.extend(out.v);
        draws.y_miss.extend(out.y_miss);
        draws.y_rep.extend(out.y_rep);
        draws.c_last.extend(out.c_last);
    }
    draws.meta.checks = vec![
        InvariantCheck {
            name: "phi_spd".into(),
            passed: non_spd == 0,
            detail: format!("{non_spd} of {} stored precision draws not SPD", draws.len()),
        },
        InvariantCheck {
            name: "filter_covariance_symmetric".into(),
            passed: max_asymmetry <= 1e-10,
            detail: format!("max relative asymmetry {max_asymmetry:.3e}"),
        },
        InvariantCheck {
            name: "y_miss_aligned".into(),
            passed: draws.y_miss.iter().all(|m| m.len() == draws.missing_cells.len()),
            detail: format!("{} missing cells", draws.missing_cells.len()),
        },
    ];
    draws.meta.diagnostics = diagnostics::standard_diagnostics(spec, &draws);
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_local_linear;

    fn surface(values: &[f64]) -> RateSurface {
        let m = DMatrix::from_column_slice(values.len(), 1, values);
        RateSurface::new(vec!["p".into()], 1, m, None).unwrap()
    }

    #[test]
    fn interpolation_midpoint() {
        let y = surface(&[-8.0, f64::NAN, -6.0]);
        let f = initialize_missing(&y).unwrap();
        assert_eq!(f.value(1, 0), -7.0);
        assert!(!f.has_missing());
    }

    #[test]
    fn boundary_runs_are_constant() {
        let y = surface(&[f64::NAN, f64::NAN, f64::NAN, -7.0, -6.5, f64::NAN]);
        let f = initialize_missing(&y).unwrap();
        for a in 0..3 {
            assert_eq!(f.value(a, 0), -7.0);
        }
        assert_eq!(f.value(5, 0), -6.5);
    }

    #[test]
    fn complete_surface_unchanged() {
        let y = surface(&[-8.0, -7.0]);
        assert_eq!(initialize_missing(&y).unwrap(), y);
    }

    #[test]
    fn too_few_observed_ages() {
        let y = surface(&[f64::NAN, -7.0, f64::NAN]);
        assert!(matches!(initialize_missing(&y), Err(Error::Domain(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = GibbsConfig {
            iterations: 10,
            burn_in: 10,
            ..GibbsConfig::default()
        };
        assert!(c.validate().is_err());
        c.burn_in = 9;
        assert!(c.validate().is_ok());
        assert_eq!(c.kept_per_chain(), 1);
        c.thin = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_stored_draw() {
        let spec = build_local_linear(1).unwrap();
        let y = surface(&[-8.0, -7.9, f64::NAN, -7.7, -7.5]);
        let config = GibbsConfig {
            iterations: 4,
            burn_in: 3,
            thin: 1,
            ..GibbsConfig::default()
        };
        let schedule = DiscountSchedule::uniform(0.9, 1).unwrap();
        let d = run_gibbs(&spec, &y, &schedule, &config).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.y_miss[0].len(), 1);
        assert_eq!(d.theta[0].shape(), (6, 2));
        assert_eq!(d.y_rep[0][(2, 0)], d.y_miss[0][0]);
        assert!(d.meta.all_checks_passed());
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = build_local_linear(1).unwrap();
        let y = surface(&[-8.0, -7.9, f64::NAN, -7.7, -7.5, -7.2]);
        let config = GibbsConfig {
            iterations: 30,
            burn_in: 10,
            thin: 2,
            chains: 2,
            ..GibbsConfig::default()
        };
        let schedule = DiscountSchedule::uniform(0.9, 1).unwrap();
        let a = run_gibbs(&spec, &y, &schedule, &config).unwrap();
        let b = run_gibbs(&spec, &y, &schedule, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert_eq!(a.n_chains(), 2);
        assert_ne!(a.theta[0], a.theta[10]);
    }
}
