//! DLM structure for one or more populations: observation and evolution
//! matrices, initial-state and Wishart priors, and age-varying discount
//! schedules.
//!
//! The state at each age is ordered
//! `(μ¹, β¹, …, μᴶ, βᴶ[, α])`: a level and slope per population, then the
//! optional common term.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{chol_psd, WishartParams};
use crate::error::{Error, Result};

/// Prior on the observational precision `Φ = V⁻¹`, parametrised by a weight
/// `d0` and scale seed `s0`: `v0 = (d0 + 1)/2`, `S0 = (d0 - 2) s0 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WishartPrior {
    pub d0: f64,
    pub s0: DMatrix<f64>,
    pub v0: f64,
    pub rate: DMatrix<f64>,
}

pub const DEFAULT_D0: f64 = 3.0;
pub const DEFAULT_S0_SCALE: f64 = 0.01;
pub const DEFAULT_PRIOR_SCALE: f64 = 100.0;

impl WishartPrior {
    pub fn new(d0: f64, s0: DMatrix<f64>) -> Result<Self> {
        if d0.is_nan() || d0 <= 2.0 {
            return Err(Error::Domain(format!(
                "d0 must exceed 2 so the prior rate is positive definite, got {d0}"
            )));
        }
        if s0.nrows() != s0.ncols() || s0.clone().cholesky().is_none() {
            return Err(Error::Domain("s0 must be symmetric positive definite".into()));
        }
        let v0 = (d0 + 1.0) / 2.0;
        let rate = &s0 * ((d0 - 2.0) / 2.0);
        Ok(Self { d0, s0, v0, rate })
    }

    pub fn params(&self) -> WishartParams {
        WishartParams::new(self.v0, self.rate.clone())
            .expect("validated at construction")
    }

    pub fn dim(&self) -> usize {
        self.s0.nrows()
    }
}

/// `d0` and `s0 = s0_scale · I_J`.
pub fn wishart_prior(d0: f64, s0_scale: f64, n_populations: usize) -> Result<WishartPrior> {
    if s0_scale.is_nan() || s0_scale <= 0.0 {
        return Err(Error::Domain(format!("s0 scale must be positive, got {s0_scale}")));
    }
    WishartPrior::new(d0, DMatrix::identity(n_populations, n_populations) * s0_scale)
}

/// `m0 = mean` (zero when absent), `C0 = scale · I`.
pub fn initial_prior(
    state_dim: usize,
    mean: Option<DVector<f64>>,
    variance_scale: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if variance_scale.is_nan() || variance_scale <= 0.0 {
        return Err(Error::Domain(format!(
            "prior variance scale must be positive, got {variance_scale}"
        )));
    }
    let m0 = mean.unwrap_or_else(|| DVector::zeros(state_dim));
    if m0.len() != state_dim {
        return Err(Error::Domain(format!(
            "prior mean has length {} but the state has dimension {state_dim}",
            m0.len()
        )));
    }
    Ok((m0, DMatrix::identity(state_dim, state_dim) * variance_scale))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlmSpec {
    n_populations: usize,
    common_term: bool,
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    m0: DVector<f64>,
    c0: DMatrix<f64>,
    wishart: WishartPrior,
}

/// Superposition of one local linear trend per population.
pub fn build_local_linear(n_populations: usize) -> Result<DlmSpec> {
    DlmSpec::build(n_populations, false)
}

/// Local linear trends plus a shared level `α` that evolves as
/// `α_x = α_{x-1} + Σ_j μ^(j)_{x-1} + w*` and enters every observation.
pub fn build_common_term(n_populations: usize) -> Result<DlmSpec> {
    DlmSpec::build(n_populations, true)
}

impl DlmSpec {
    fn build(n_populations: usize, common_term: bool) -> Result<Self> {
        if n_populations == 0 {
            return Err(Error::Domain("at least one population is required".into()));
        }
        let j = n_populations;
        let p = 2 * j + usize::from(common_term);
        let mut f = DMatrix::zeros(j, p);
        let mut g = DMatrix::zeros(p, p);
        for k in 0..j {
            f[(k, 2 * k)] = 1.0;
            g[(2 * k, 2 * k)] = 1.0;
            g[(2 * k, 2 * k + 1)] = 1.0;
            g[(2 * k + 1, 2 * k + 1)] = 1.0;
        }
        if common_term {
            let a = p - 1;
            for k in 0..j {
                f[(k, a)] = 1.0;
                g[(a, 2 * k)] = 1.0;
            }
            g[(a, a)] = 1.0;
        }
        let (m0, c0) = initial_prior(p, None, DEFAULT_PRIOR_SCALE)?;
        Ok(Self {
            n_populations,
            common_term,
            f,
            g,
            m0,
            c0,
            wishart: wishart_prior(DEFAULT_D0, DEFAULT_S0_SCALE, j)?,
        })
    }

    /// Replaces the initial-state prior. `c0` must be symmetric PSD; a zero
    /// matrix pins the initial state at `m0`.
    pub fn with_initial_prior(mut self, m0: DVector<f64>, c0: DMatrix<f64>) -> Result<Self> {
        let p = self.state_dim();
        if m0.len() != p || c0.shape() != (p, p) {
            return Err(Error::Domain(format!(
                "initial prior must have dimension {p}"
            )));
        }
        if (&c0 - c0.transpose()).amax() > 1e-12 * c0.amax().max(1.0) {
            return Err(Error::Domain("C0 must be symmetric".into()));
        }
        chol_psd(&c0, 1e-8).map_err(|_| Error::Domain("C0 must be positive semi-definite".into()))?;
        self.m0 = m0;
        self.c0 = c0;
        Ok(self)
    }

    pub fn with_wishart(mut self, prior: WishartPrior) -> Result<Self> {
        if prior.dim() != self.n_populations {
            return Err(Error::Domain(format!(
                "wishart prior has dimension {} but the model has {} populations",
                prior.dim(),
                self.n_populations
            )));
        }
        self.wishart = prior;
        Ok(self)
    }

    pub fn n_populations(&self) -> usize {
        self.n_populations
    }

    pub fn common_term(&self) -> bool {
        self.common_term
    }

    pub fn state_dim(&self) -> usize {
        self.g.nrows()
    }

    /// Observation matrix at `age`. Constant in age for every model built here.
    pub fn f(&self, _age: i64) -> &DMatrix<f64> {
        &self.f
    }

    /// Evolution matrix into `age`. Constant in age for every model built here.
    pub fn g(&self, _age: i64) -> &DMatrix<f64> {
        &self.g
    }

    pub fn m0(&self) -> &DVector<f64> {
        &self.m0
    }

    pub fn c0(&self) -> &DMatrix<f64> {
        &self.c0
    }

    pub fn wishart(&self) -> &WishartPrior {
        &self.wishart
    }

    pub fn level_index(&self, population: usize) -> usize {
        2 * population
    }

    pub fn slope_index(&self, population: usize) -> usize {
        2 * population + 1
    }

    pub fn common_index(&self) -> Option<usize> {
        self.common_term.then(|| 2 * self.n_populations)
    }

    /// Population owning each state component; `None` for the common term.
    pub fn state_owner(&self, state: usize) -> Option<usize> {
        (state < 2 * self.n_populations).then_some(state / 2)
    }

    pub fn state_labels(&self, populations: &[String]) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.state_dim());
        for p in populations.iter().take(self.n_populations) {
            labels.push(format!("level:{p}"));
            labels.push(format!("slope:{p}"));
        }
        if self.common_term {
            labels.push("common".into());
        }
        labels
    }
}

/// Inclusive age span; an open end (`86+`) runs to infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeSpan {
    pub start: i64,
    pub end: Option<i64>,
}

impl AgeSpan {
    pub fn contains(&self, age: i64) -> bool {
        age >= self.start && self.end.is_none_or(|e| age <= e)
    }
}

impl fmt::Display for AgeSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.end {
            None => write!(f, "{}+", self.start),
            Some(e) if e == self.start => write!(f, "{e}"),
            Some(e) => write!(f, "{}-{}", self.start, e),
        }
    }
}

impl FromStr for AgeSpan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("invalid age span '{s}'"));
        if let Some(start) = s.strip_suffix('+') {
            return Ok(Self {
                start: start.trim().parse().map_err(|_| bad())?,
                end: None,
            });
        }
        let (start, end) = match s.split_once('-') {
            Some((a, b)) => (
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ),
            None => {
                let a: i64 = s.parse().map_err(|_| bad())?;
                (a, a)
            }
        };
        if end < start {
            return Err(bad());
        }
        Ok(Self {
            start,
            end: Some(end),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountSegment {
    pub span: AgeSpan,
    pub delta: f64,
}

impl DiscountSegment {
    pub fn new(span: AgeSpan, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Domain(format!(
                "discount factor must lie in (0, 1], got {delta} for ages {span}"
            )));
        }
        Ok(Self { span, delta })
    }
}

/// Piecewise-constant discount factors over age, with optional
/// per-population overrides that take precedence where they apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountSchedule {
    segments: Vec<DiscountSegment>,
    overrides: BTreeMap<String, Vec<DiscountSegment>>,
}

fn check_ordered(segments: &[DiscountSegment], contiguous: bool) -> Result<()> {
    for w in segments.windows(2) {
        let Some(end) = w[0].span.end else {
            return Err(Error::Domain(format!(
                "open-ended discount segment {} must be last",
                w[0].span
            )));
        };
        if w[1].span.start <= end {
            return Err(Error::Domain(format!(
                "discount segments {} and {} overlap",
                w[0].span, w[1].span
            )));
        }
        if contiguous && w[1].span.start != end + 1 {
            return Err(Error::Domain(format!(
                "gap between discount segments {} and {}",
                w[0].span, w[1].span
            )));
        }
    }
    Ok(())
}

impl DiscountSchedule {
    /// Segments may be given in any order; they must not overlap or leave gaps.
    pub fn new(mut segments: Vec<DiscountSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Domain("discount schedule needs at least one segment".into()));
        }
        for s in &segments {
            DiscountSegment::new(s.span, s.delta)?;
        }
        segments.sort_by_key(|s| s.span.start);
        check_ordered(&segments, true)?;
        Ok(Self {
            segments,
            overrides: BTreeMap::new(),
        })
    }

    /// One factor for every age from `first_age` on.
    pub fn uniform(delta: f64, first_age: i64) -> Result<Self> {
        Self::new(vec![DiscountSegment::new(
            AgeSpan {
                start: first_age,
                end: None,
            },
            delta,
        )?])
    }

    pub fn with_override(
        mut self,
        population: impl Into<String>,
        mut segments: Vec<DiscountSegment>,
    ) -> Result<Self> {
        for s in &segments {
            DiscountSegment::new(s.span, s.delta)?;
        }
        segments.sort_by_key(|s| s.span.start);
        check_ordered(&segments, false)?;
        self.overrides.insert(population.into(), segments);
        Ok(self)
    }

    pub fn segments(&self) -> &[DiscountSegment] {
        &self.segments
    }

    pub fn overrides(&self) -> &BTreeMap<String, Vec<DiscountSegment>> {
        &self.overrides
    }

    /// Checks that every age in `first..=last` has a factor.
    pub fn validate_cover(&self, first: i64, last: i64) -> Result<()> {
        let head = self.segments[0].span.start;
        let tail = self.segments[self.segments.len() - 1].span;
        if head > first || tail.end.is_some_and(|e| e < last) {
            return Err(Error::Domain(format!(
                "discount schedule covers {head}-{} but ages run {first}-{last}",
                tail.end.map_or("inf".to_string(), |e| e.to_string())
            )));
        }
        Ok(())
    }

    /// Factor in force at `age`; a population override wins when present.
    pub fn discount_at(&self, age: i64, population: Option<&str>) -> Result<f64> {
        if let Some(over) = population.and_then(|p| self.overrides.get(p)) {
            if let Some(s) = over.iter().find(|s| s.span.contains(age)) {
                return Ok(s.delta);
            }
        }
        self.segments
            .iter()
            .find(|s| s.span.contains(age))
            .map(|s| s.delta)
            .ok_or_else(|| Error::Domain(format!("no discount factor covers age {age}")))
    }

    /// Factor of the last base segment.
    pub fn last_delta(&self) -> f64 {
        self.segments[self.segments.len() - 1].delta
    }
}
