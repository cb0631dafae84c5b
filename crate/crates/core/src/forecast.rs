//! Extrapolation beyond the last observed age, convergence blending across
//! populations and predictive summaries on the log-rate, rate and
//! death-probability scales.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::death_probability;
use crate::distributions::{chol_psd, mvn_sample_factored, symmetrize};
use crate::error::{Error, Result};
use crate::inference::{discounted_covariance, DiscountMode, DiscountPlan};
use crate::model::{DiscountSchedule, DlmSpec};
use crate::sampler::summary::{describe, write_records};
use crate::sampler::{Interval, PosteriorDraws};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blend {
    #[default]
    None,
    Linear,
}

impl FromStr for Blend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Blend::None),
            "linear" => Ok(Blend::Linear),
            other => Err(Error::Config(format!(
                "unknown blend '{other}' (expected none or linear)"
            ))),
        }
    }
}

impl fmt::Display for Blend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Blend::None => "none",
            Blend::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    /// Number of ages beyond the last fitted age.
    pub horizon: usize,
    /// Age by which blended curves coincide.
    pub terminal_age: Option<i64>,
    pub blend: Blend,
    /// Discount factor for every state component beyond the last age; when
    /// absent the factors in force at the last age are used.
    pub delta: Option<f64>,
    pub interval: Interval,
}

impl ForecastConfig {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            terminal_age: None,
            blend: Blend::None,
            delta: None,
            interval: Interval::default(),
        }
    }

    pub fn validate(&self, last_age: i64) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Domain("forecast horizon must be at least 1".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Domain(format!(
                    "discount factor {d} outside (0, 1]"
                )));
            }
        }
        match (self.blend, self.terminal_age) {
            (Blend::Linear, None) => Err(Error::Domain(
                "linear blending needs a terminal age".into(),
            )),
            (_, Some(t)) if t < last_age => Err(Error::Domain(format!(
                "terminal age {t} precedes the last fitted age {last_age}"
            ))),
            (Blend::Linear, Some(t)) if t > last_age + self.horizon as i64 => {
                Err(Error::Domain(format!(
                    "terminal age {t} lies beyond the forecast horizon (last age {})",
                    last_age + self.horizon as i64
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Per-component discount factors used beyond the last age.
pub fn extrapolation_factors(
    spec: &DlmSpec,
    schedule: &DiscountSchedule,
    last_age: i64,
    populations: &[String],
    delta: Option<f64>,
) -> Result<DVector<f64>> {
    match delta {
        Some(d) => Ok(DVector::from_element(spec.state_dim(), d)),
        None => DiscountPlan::factors_at(spec, schedule, last_age, populations),
    }
}

/// Predictive log-rate draws at ages `ϑ+1..ϑ+k`: one `k × J` matrix per
/// posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    pub populations: Vec<String>,
    pub ages: Vec<i64>,
    pub values: Vec<DMatrix<f64>>,
}

/// Square-root factor of a symmetric matrix after clipping negative
/// eigenvalues. Used when the evolution covariance of per-population
/// discounting in [`DiscountMode::Full`] is slightly indefinite.
fn clipped_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Ok(f) = chol_psd(m, 1e-10) {
        return f.l;
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Propagates every posterior draw forward `config.horizon` ages.
///
/// Starting from `θ_ϑ` and `C*_ϑ = C_ϑ`, each step draws
/// `θ ← G θ + ω` with `ω ~ N(0, R - P)`, `P = G C* Gᵀ`, `R` the discounted
/// `P`, sets `C* ← R`, and emits `y = F θ + v` with `v ~ N(0, V)`.
pub fn extrapolate<R: Rng + ?Sized>(
    draws: &PosteriorDraws,
    spec: &DlmSpec,
    factors: &DVector<f64>,
    mode: DiscountMode,
    config: &ForecastConfig,
    rng: &mut R,
) -> Result<PredictiveDraws> {
    if draws.is_empty() {
        return Err(Error::Domain("no posterior draws to extrapolate".into()));
    }
    let last_age = *draws.ages.last().expect("non-empty ages");
    config.validate(last_age)?;
    let k = config.horizon;
    let j = draws.n_populations();
    let ages: Vec<i64> = (1..=k as i64).map(|h| last_age + h).collect();
    let mut values = Vec::with_capacity(draws.len());
    for d in 0..draws.len() {
        let mut theta = draws.state(d, draws.n_ages() - 1);
        let mut c_star = draws.c_last[d].clone();
        let noise = chol_psd(&draws.v[d], 0.0)
            .map_err(|e| e.context(format!("observational covariance of draw {d}")))?
            .l;
        let mut out = DMatrix::zeros(k, j);
        for (h, &age) in ages.iter().enumerate() {
            let g = spec.g(age);
            let p = symmetrize(&(g * &c_star * g.transpose()));
            let r = discounted_covariance(spec, &p, factors, mode);
            let w = &r - &p;
            let l = if w.amax() <= 1e-14 * p.amax() {
                DMatrix::zeros(w.nrows(), w.ncols())
            } else {
                clipped_factor(&w)
            };
            theta = mvn_sample_factored(&(g * &theta), &l, rng);
            c_star = r;
            let y = mvn_sample_factored(&(spec.f(age) * &theta), &noise, rng);
            out.set_row(h, &y.transpose());
        }
        values.push(out);
    }
    Ok(PredictiveDraws {
        populations: draws.populations.clone(),
        ages,
        values,
    })
}

/// Blending weight `(x - ϑ) / (T - ϑ)` clamped to `[0, 1]`.
pub fn blend_weight(age: i64, last_age: i64, terminal_age: i64) -> f64 {
    if age <= last_age {
        0.0
    } else if age >= terminal_age {
        1.0
    } else {
        (age - last_age) as f64 / (terminal_age - last_age) as f64
    }
}

/// Moves each draw's curves linearly toward their across-population mean so
/// that all populations coincide from `terminal_age` on. With a single
/// population the draws come back unchanged.
pub fn blend_convergence(
    pred: &PredictiveDraws,
    last_age: i64,
    terminal_age: i64,
) -> PredictiveDraws {
    let j = pred.populations.len();
    if j < 2 {
        log::warn!("convergence blending needs at least two populations; skipped");
        return pred.clone();
    }
    let mut out = pred.clone();
    for m in &mut out.values {
        for (h, &age) in pred.ages.iter().enumerate() {
            let w = blend_weight(age, last_age, terminal_age);
            if w == 0.0 {
                continue;
            }
            let ybar = m.row(h).sum() / j as f64;
            for c in 0..j {
                m[(h, c)] = if w >= 1.0 {
                    ybar
                } else {
                    (1.0 - w) * m[(h, c)] + w * ybar
                };
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    LogRate,
    Rate,
    DeathProb,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::LogRate, Scale::Rate, Scale::DeathProb];

    /// Monotone map from the log-rate scale.
    pub fn transform(self, y: f64) -> f64 {
        match self {
            Scale::LogRate => y,
            Scale::Rate => y.exp(),
            Scale::DeathProb => death_probability(y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRow {
    pub population: String,
    pub age: i64,
    pub scale: Scale,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub interval: Interval,
    pub rows: Vec<PredictiveRow>,
}

/// Summaries over the fitted ages (replicated observations) followed by the
/// extrapolated ages. Quantiles are taken on the log-rate scale and mapped
/// to the other scales; means are computed on each scale.
pub fn summarize_predictive(
    fit: &PosteriorDraws,
    pred: &PredictiveDraws,
    interval: Interval,
) -> Result<PredictiveSummary> {
    if fit.len() != pred.values.len() {
        return Err(Error::Domain(format!(
            "{} posterior draws but {} predictive draws",
            fit.len(),
            pred.values.len()
        )));
    }
    if fit.is_empty() {
        return Err(Error::Domain("no draws to summarize".into()));
    }
    let nd = fit.len();
    let mut rows = Vec::new();
    let mut buf = vec![0.0; nd];
    for (k, pop) in fit.populations.iter().enumerate() {
        let ages = fit.ages.iter().chain(&pred.ages).enumerate();
        for (idx, &age) in ages {
            for (d, slot) in buf.iter_mut().enumerate() {
                *slot = if idx < fit.n_ages() {
                    fit.y_rep[d][(idx, k)]
                } else {
                    pred.values[d][(idx - fit.n_ages(), k)]
                };
            }
            for scale in Scale::ALL {
                let mean = buf.iter().map(|&y| scale.transform(y)).sum::<f64>() / nd as f64;
                let (_, median, lower, upper) = describe(&mut buf, interval);
                rows.push(PredictiveRow {
                    population: pop.clone(),
                    age,
                    scale,
                    mean,
                    median: scale.transform(median),
                    lower: scale.transform(lower),
                    upper: scale.transform(upper),
                });
            }
        }
    }
    Ok(PredictiveSummary { interval, rows })
}

impl PredictiveSummary {
    /// `population,age,scale,mean,median,lower,upper`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_records(writer, &self.rows)
    }

    pub fn row(&self, population: &str, age: i64, scale: Scale) -> Option<&PredictiveRow> {
        self.rows
            .iter()
            .find(|r| r.population == population && r.age == age && r.scale == scale)
    }

    pub fn populations(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.population) {
                out.push(r.population.clone());
            }
        }
        out
    }

    /// Log-rate medians per population over ascending ages.
    pub fn medians(&self, population: &str) -> Vec<(i64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.population == population && r.scale == Scale::LogRate)
            .map(|r| (r.age, r.median))
            .collect()
    }
}

/// First age beyond `last_age` at which two populations' median log-rate
/// curves swap order relative to their order at `last_age`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub age: i64,
    pub first: String,
    pub second: String,
}

pub fn first_crossing(summary: &PredictiveSummary, last_age: i64) -> Option<Crossing> {
    let pops = summary.populations();
    let curves: Vec<Vec<(i64, f64)>> = pops.iter().map(|p| summary.medians(p)).collect();
    let at = |c: &[(i64, f64)], age: i64| c.iter().find(|(a, _)| *a == age).map(|(_, v)| *v);
    let ages: Vec<i64> = curves
        .first()?
        .iter()
        .map(|(a, _)| *a)
        .filter(|&a| a > last_age)
        .collect();
    for age in ages {
        for a in 0..pops.len() {
            for b in a + 1..pops.len() {
                let base = at(&curves[a], last_age)? - at(&curves[b], last_age)?;
                let now = at(&curves[a], age)? - at(&curves[b], age)?;
                if base * now < 0.0 {
                    return Some(Crossing {
                        age,
                        first: pops[a].clone(),
                        second: pops[b].clone(),
                    });
                }
            }
        }
    }
    None
}
