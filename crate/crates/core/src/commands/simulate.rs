use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Overrides;
use super::fit::{fit_surface, load_config, load_selected};
use super::{ensure_dir, files, write_atomic};
use crate::data::{central_rates, mask_ages, missing_share, parse_mask_spec, AgeRange, MortalityTable};
use crate::error::{Error, Result};
use crate::forecast::{summarize_predictive, PredictiveDraws, Scale};
use crate::metrics::{compare, Candidate, Cell, ComparisonReport};
use crate::sampler::Interval;

use super::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Target population alone.
    Univariate,
    /// All selected populations, independent local linear trends tied by
    /// correlated observational noise.
    Joint,
    /// As `Joint` plus the shared common term.
    JointCommonTerm,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Univariate => "univariate",
            ModelKind::Joint => "joint",
            ModelKind::JointCommonTerm => "joint-ct",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "univariate" => Ok(ModelKind::Univariate),
            "joint" => Ok(ModelKind::Joint),
            "joint-ct" | "joint_ct" | "common-term" => Ok(ModelKind::JointCommonTerm),
            other => Err(Error::Config(format!(
                "unknown model '{other}' (expected univariate, joint or joint-ct)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: ComparisonReport,
    /// Root mean squared error of the posterior-mean imputation at the
    /// held-out cells, per model.
    pub imputation_rmse: Vec<(ModelKind, f64)>,
    pub cells: Vec<Cell>,
}

impl ScenarioOutcome {
    pub fn rmse(&self, model: ModelKind) -> Option<f64> {
        self.imputation_rmse
            .iter()
            .find(|(m, _)| *m == model)
            .map(|(_, r)| *r)
    }
}

/// Masks `ranges` of `target`, fits each model to the masked data and
/// scores the held-out cells (those masked here that were observed).
pub fn evaluate_scenario(
    config: &RunConfig,
    table: &MortalityTable,
    target: &str,
    scenario: &str,
    ranges: &[AgeRange],
    models: &[ModelKind],
    scale: Scale,
) -> Result<ScenarioOutcome> {
    let full = central_rates(table);
    let j = full
        .population_index(target)
        .ok_or_else(|| Error::Domain(format!("unknown target population '{target}'")))?;
    let masked = mask_ages(table, target, ranges)?;
    let cells: Vec<Cell> = full
        .ages()
        .iter()
        .enumerate()
        .filter(|&(a, &age)| !full.is_missing(a, j) && ranges.iter().any(|r| r.contains(age)))
        .map(|(_, &age)| Cell {
            population: target.to_string(),
            age,
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::Domain(format!(
            "scenario '{scenario}' hides no observed cell of '{target}'; nothing to evaluate"
        )));
    }
    let missing_pct = 100.0 * missing_share(&masked, target);
    let masked_rates = central_rates(&masked);

    let mut summaries = Vec::with_capacity(models.len());
    let mut imputation_rmse = Vec::with_capacity(models.len());
    for &model in models {
        let surface = match model {
            ModelKind::Univariate => masked_rates.select_populations(&[target.to_string()])?,
            _ if masked_rates.n_populations() < 2 => {
                return Err(Error::Domain(format!(
                    "model '{model}' needs at least two populations"
                )))
            }
            _ => masked_rates.clone(),
        };
        let (_, _, draws) = fit_surface(config, &surface, model == ModelKind::JointCommonTerm)
            .map_err(|e| e.context(format!("fitting {model}")))?;
        let empty = PredictiveDraws {
            populations: draws.populations.clone(),
            ages: Vec::new(),
            values: vec![nalgebra::DMatrix::zeros(0, draws.n_populations()); draws.len()],
        };
        summaries.push(summarize_predictive(&draws, &empty, Interval::default())?);

        let tj = surface.population_index(target).expect("target kept");
        let mut sq = 0.0;
        for c in &cells {
            let a = surface.age_index(c.age).expect("age in grid");
            let slot = draws
                .missing_cells
                .iter()
                .position(|&cell| cell == (tj, a))
                .expect("held-out cell is imputed");
            let mean = draws.y_miss.iter().map(|m| m[slot]).sum::<f64>() / draws.len() as f64;
            let truth = full.value(a, j);
            sq += (mean - truth).powi(2);
        }
        imputation_rmse.push((model, (sq / cells.len() as f64).sqrt()));
    }
    let candidates: Vec<Candidate<'_>> = models
        .iter()
        .zip(&summaries)
        .map(|(m, s)| Candidate {
            label: m.label(),
            summary: s,
        })
        .collect();
    let report = compare(scenario, missing_pct, &candidates, &full, &cells, scale)?;
    Ok(ScenarioOutcome {
        report,
        imputation_rmse,
        cells,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateRequest {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    /// Scenario letter (`a`-`f`) or explicit ranges such as `3-16`.
    pub scenario: String,
    /// Population to mask; the last selected population when absent.
    pub target: Option<String>,
    pub models: Vec<ModelKind>,
    pub scale: Scale,
    pub overrides: Overrides,
    pub env_seed: Option<String>,
}

/// Runs one missing-data scenario and writes `report.csv` / `report.txt`.
pub fn cmd_simulate_missing(req: &SimulateRequest) -> Result<ScenarioOutcome> {
    let config = load_config(req.config.as_deref(), &req.overrides, req.env_seed.as_deref())?;
    let table = load_selected(&req.data, &config)?;
    let ranges = parse_mask_spec(&req.scenario)?;
    let target = match &req.target {
        Some(t) => t.clone(),
        None => table.populations()[table.populations().len() - 1].clone(),
    };
    if req.models.is_empty() {
        return Err(Error::Config("no models to compare".into()));
    }
    let outcome = evaluate_scenario(
        &config,
        &table,
        &target,
        &req.scenario,
        &ranges,
        &req.models,
        req.scale,
    )?;
    ensure_dir(&req.out)?;
    write_atomic(&req.out.join(files::REPORT_CSV), |w| outcome.report.write_csv(w))?;
    let table_text = outcome.report.to_table();
    write_atomic(&req.out.join(files::REPORT_TXT), |w| {
        w.write_all(table_text.as_bytes())
            .map_err(|e| Error::io(files::REPORT_TXT, e))
    })?;
    Ok(outcome)
}
