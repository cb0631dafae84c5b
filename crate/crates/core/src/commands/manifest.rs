use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::Cell;
use crate::sampler::{InvariantCheck, ParamDiagnostic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun or reload a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub data: DataRecord,
    pub config: RunConfig,
    pub populations: Vec<String>,
    pub first_age: i64,
    pub last_age: i64,
    pub state_labels: Vec<String>,
    /// Cells that were missing in the input, in imputation order.
    pub missing_cells: Vec<Cell>,
    pub n_draws: usize,
    pub wall_clock_seconds: f64,
    pub checks: Vec<InvariantCheck>,
    pub diagnostics: Vec<ParamDiagnostic>,
}

impl RunManifest {
    pub fn ages(&self) -> Vec<i64> {
        (self.first_age..=self.last_age).collect()
    }

    /// Missing cells as `(population index, age index)`.
    pub fn missing_indices(&self) -> Result<Vec<(usize, usize)>> {
        self.missing_cells
            .iter()
            .map(|c| {
                let j = self
                    .populations
                    .iter()
                    .position(|p| *p == c.population)
                    .ok_or_else(|| Error::Schema(format!("unknown population '{}'", c.population)))?;
                if c.age < self.first_age || c.age > self.last_age {
                    return Err(Error::Schema(format!("missing cell age {} out of range", c.age)));
                }
                Ok((j, (c.age - self.first_age) as usize))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numerical(format!("manifest serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line() as u64,
            message: format!("manifest: {e}"),
        })
    }
}
