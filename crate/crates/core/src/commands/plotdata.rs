use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ensure_dir, files, write_atomic};
use crate::error::{Error, Result};
use crate::sampler::summary::write_records;
use crate::sampler::{Series, SummaryRow};

/// One row of `series,population,age,value,lower,upper`. `raw` rows carry
/// the observed log-rate; `fitted` rows the posterior median of the mean
/// curve with its credible band; `band` rows the predictive median and band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub series: String,
    pub population: String,
    pub age: i64,
    pub value: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Deserialize)]
struct ObservedRow {
    population: String,
    age: i64,
    log_rate: Option<f64>,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line: 0,
            message: format!("{}: {other:?}", path.display()),
        },
    })?;
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

/// Converts a fit directory into long-format plotting data written to
/// `out` (the fit directory when absent).
pub fn cmd_plotdata(fit_dir: &Path, out: Option<&Path>) -> Result<Vec<PlotRow>> {
    let summary: Vec<SummaryRow> = read_csv(&fit_dir.join(files::SUMMARY))?;
    let observed: Vec<ObservedRow> = read_csv(&fit_dir.join(files::OBSERVED))?;
    if summary.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: format!("{} has no rows", files::SUMMARY),
        });
    }
    let mut rows: Vec<PlotRow> = observed
        .into_iter()
        .map(|o| PlotRow {
            series: "raw".into(),
            population: o.population,
            age: o.age,
            value: o.log_rate,
            lower: None,
            upper: None,
        })
        .collect();
    for r in summary {
        rows.push(PlotRow {
            series: match r.series {
                Series::Fitted => "fitted",
                Series::Predictive => "band",
            }
            .into(),
            population: r.population,
            age: r.age,
            value: Some(r.median),
            lower: Some(r.lower),
            upper: Some(r.upper),
        });
    }
    let dir: PathBuf = out.unwrap_or(fit_dir).to_path_buf();
    ensure_dir(&dir)?;
    write_atomic(&dir.join(files::PLOTDATA), |w| write_records(w, &rows))?;
    Ok(rows)
}
