//! Prediction-error and interval-width metrics, and model comparison
//! reports over held-out cells.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::RateSurface;
use crate::error::{Error, Result};
use crate::forecast::{PredictiveSummary, Scale};
use crate::sampler::summary::write_records;

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Domain("no cells to evaluate".into()));
    }
    Ok(())
}

/// Mean squared prediction error.
pub fn mspe(y: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y, y_pred)?;
    Ok(y.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// Mean absolute prediction error.
pub fn mape(y: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y, y_pred)?;
    Ok(y.iter().zip(y_pred).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalWidth {
    pub per_cell: Vec<f64>,
    pub mean: f64,
}

/// Widths `u - l` of credible intervals.
pub fn wci(upper: &[f64], lower: &[f64]) -> Result<IntervalWidth> {
    check_lengths(upper, lower)?;
    let per_cell: Vec<f64> = upper.iter().zip(lower).map(|(u, l)| u - l).collect();
    if let Some(i) = per_cell.iter().position(|w| w.is_nan() || *w < 0.0) {
        return Err(Error::Domain(format!(
            "upper bound below lower bound at cell {i}"
        )));
    }
    let mean = per_cell.iter().sum::<f64>() / per_cell.len() as f64;
    Ok(IntervalWidth { per_cell, mean })
}

/// A cell identified by population and age.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub population: String,
    pub age: i64,
}

/// One fitted model to be scored.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub label: &'a str,
    pub summary: &'a PredictiveSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub scenario: String,
    pub missing_pct: f64,
    pub scale: Scale,
    pub mspe: f64,
    pub mape: f64,
    pub wci: f64,
    pub best_mspe: bool,
    pub best_mape: bool,
    pub best_wci: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

/// Scores each candidate at `cells` against the true values in `held_out`.
///
/// The point prediction is the posterior median; the interval is the
/// summary's credible band. Only the listed cells of `held_out` are read.
pub fn compare(
    scenario: &str,
    missing_pct: f64,
    candidates: &[Candidate<'_>],
    held_out: &RateSurface,
    cells: &[Cell],
    scale: Scale,
) -> Result<ComparisonReport> {
    if cells.is_empty() {
        return Err(Error::Domain(format!(
            "scenario '{scenario}' has no held-out cells to evaluate"
        )));
    }
    let truth = cells
        .iter()
        .map(|c| {
            let j = held_out.population_index(&c.population);
            let a = held_out.age_index(c.age);
            match (j, a) {
                (Some(j), Some(a)) if held_out.value(a, j).is_finite() => {
                    Ok(scale.transform(held_out.value(a, j)))
                }
                _ => Err(Error::Domain(format!(
                    "no held-out value for {} at age {}",
                    c.population, c.age
                ))),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let mut median = Vec::with_capacity(cells.len());
        let mut lower = Vec::with_capacity(cells.len());
        let mut upper = Vec::with_capacity(cells.len());
        for c in cells {
            let r = cand.summary.row(&c.population, c.age, scale).ok_or_else(|| {
                Error::Domain(format!(
                    "model '{}' does not cover {} at age {}",
                    cand.label, c.population, c.age
                ))
            })?;
            median.push(r.median);
            lower.push(r.lower);
            upper.push(r.upper);
        }
        rows.push(ComparisonRow {
            model: cand.label.to_string(),
            scenario: scenario.to_string(),
            missing_pct,
            scale,
            mspe: mspe(&truth, &median)?,
            mape: mape(&truth, &median)?,
            wci: wci(&upper, &lower)?.mean,
            best_mspe: false,
            best_mape: false,
            best_wci: false,
        });
    }
    let mut report = ComparisonReport { rows };
    report.flag_winners();
    Ok(report)
}

impl ComparisonReport {
    pub fn extend(&mut self, other: ComparisonReport) {
        self.rows.extend(other.rows);
        self.flag_winners();
    }

    /// Marks, within each scenario, every row attaining the minimum of each
    /// metric (ties mark all tied rows).
    fn flag_winners(&mut self) {
        let scenarios: Vec<String> = self.rows.iter().map(|r| r.scenario.clone()).collect();
        for s in &scenarios {
            let best = |f: fn(&ComparisonRow) -> f64, rows: &[ComparisonRow]| {
                rows.iter()
                    .filter(|r| &r.scenario == s)
                    .map(f)
                    .fold(f64::INFINITY, f64::min)
            };
            let (m1, m2, m3) = (
                best(|r| r.mspe, &self.rows),
                best(|r| r.mape, &self.rows),
                best(|r| r.wci, &self.rows),
            );
            for r in self.rows.iter_mut().filter(|r| &r.scenario == s) {
                r.best_mspe = r.mspe == m1;
                r.best_mape = r.mape == m2;
                r.best_wci = r.wci == m3;
            }
        }
    }

    /// Whether the scenario's best value of some metric is shared by more
    /// than one model.
    pub fn has_tie(&self, scenario: &str) -> bool {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.scenario == scenario).collect();
        [
            rows.iter().filter(|r| r.best_mspe).count(),
            rows.iter().filter(|r| r.best_mape).count(),
            rows.iter().filter(|r| r.best_wci).count(),
        ]
        .iter()
        .any(|&n| n > 1)
    }

    pub fn row(&self, model: &str, scenario: &str) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.scenario == scenario)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_records(writer, &self.rows)
    }

    /// Aligned plain-text table; `*` marks the best value per scenario.
    pub fn to_table(&self) -> String {
        let header = ["model", "scenario", "% missing", "MSPE", "MAPE", "WCI"];
        let cell = |v: f64, best: bool| format!("{v:.5}{}", if best { "*" } else { " " });
        let body: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.model.clone(),
                    r.scenario.clone(),
                    format!("{:.1}", r.missing_pct),
                    cell(r.mspe, r.best_mspe),
                    cell(r.mape, r.best_mape),
                    cell(r.wci, r.best_wci),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cols: &[&str]| {
            let parts: Vec<String> = cols
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i < 2 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for row in &body {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        if let Some(scale) = self.rows.first().map(|r| r.scale) {
            let name = match scale {
                Scale::LogRate => "log-rate",
                Scale::Rate => "rate",
                Scale::DeathProb => "death-probability",
            };
            let _ = writeln!(out, "metrics on the {name} scale; * marks the best value per scenario");
        }
        out
    }
}
