//! Posterior quantile summaries of fitted curves, states and `V`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::PosteriorDraws;
use crate::error::{Error, Result};
use crate::model::DlmSpec;
use crate::stats::{mean, quantile_sorted};

/// Central credible band given by its lower and upper probability levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Interval {
    fn default() -> Self {
        Self {
            lower: 0.025,
            upper: 0.975,
        }
    }
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower > upper {
            return Err(Error::Domain(format!(
                "invalid interval levels ({lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Band with mass `1 - psi`.
    pub fn central(psi: f64) -> Result<Self> {
        Self::new(psi / 2.0, 1.0 - psi / 2.0)
    }
}

/// Which fitted quantity a row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    /// Mean curve `F θ_x` (no observational noise).
    Fitted,
    /// Replicated observation `F θ_x + v`.
    Predictive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub population: String,
    pub age: i64,
    pub series: Series,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub component: String,
    pub age: i64,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub row: String,
    pub column: String,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub interval: Interval,
    pub rows: Vec<SummaryRow>,
    pub states: Vec<StateRow>,
    pub variance: Vec<VarianceRow>,
}

/// `(mean, median, lower, upper)` of a sample; sorts in place.
pub(crate) fn describe(values: &mut [f64], interval: Interval) -> (f64, f64, f64, f64) {
    let m = mean(values);
    values.sort_by(f64::total_cmp);
    (
        m,
        quantile_sorted(values, 0.5),
        quantile_sorted(values, interval.lower),
        quantile_sorted(values, interval.upper),
    )
}

pub fn summarize(
    spec: &DlmSpec,
    draws: &PosteriorDraws,
    interval: Interval,
) -> Result<PosteriorSummary> {
    if draws.is_empty() {
        return Err(Error::Domain("cannot summarize an empty set of draws".into()));
    }
    let nd = draws.len();
    let mut buf = vec![0.0; nd];
    let mut rows = Vec::new();
    for (k, pop) in draws.populations.iter().enumerate() {
        for (a, &age) in draws.ages.iter().enumerate() {
            for series in [Series::Fitted, Series::Predictive] {
                for (d, slot) in buf.iter_mut().enumerate() {
                    *slot = match series {
                        Series::Fitted => draws.fitted(spec, d, a)[k],
                        Series::Predictive => draws.y_rep[d][(a, k)],
                    };
                }
                let (mean, median, lower, upper) = describe(&mut buf, interval);
                rows.push(SummaryRow {
                    population: pop.clone(),
                    age,
                    series,
                    mean,
                    median,
                    lower,
                    upper,
                });
            }
        }
    }

    let labels = spec.state_labels(&draws.populations);
    let mut states = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        for t in 0..=draws.n_ages() {
            for (d, slot) in buf.iter_mut().enumerate() {
                *slot = draws.theta[d][(t, i)];
            }
            let (mean, median, lower, upper) = describe(&mut buf, interval);
            states.push(StateRow {
                component: label.clone(),
                age: draws.ages[0] - 1 + t as i64,
                mean,
                median,
                lower,
                upper,
            });
        }
    }

    let mut variance = Vec::new();
    for a in 0..draws.n_populations() {
        for b in a..draws.n_populations() {
            for (d, slot) in buf.iter_mut().enumerate() {
                *slot = draws.v[d][(a, b)];
            }
            let (mean, median, lower, upper) = describe(&mut buf, interval);
            variance.push(VarianceRow {
                row: draws.populations[a].clone(),
                column: draws.populations[b].clone(),
                mean,
                median,
                lower,
                upper,
            });
        }
    }
    Ok(PosteriorSummary {
        interval,
        rows,
        states,
        variance,
    })
}

pub(crate) fn write_records<W: Write, T: Serialize>(writer: W, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)
            .map_err(|e| Error::Numerical(format!("csv serialization failed: {e}")))?;
    }
    w.flush()
        .map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

impl PosteriorSummary {
    /// `population,age,series,mean,median,lower,upper`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_records(writer, &self.rows)
    }

    pub fn write_states_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_records(writer, &self.states)
    }

    pub fn write_variance_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_records(writer, &self.variance)
    }

    pub fn row(&self, population: &str, age: i64, series: Series) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.population == population && r.age == age && r.series == series)
    }
}
