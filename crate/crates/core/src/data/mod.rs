//! Death/exposure tables, log central rates and missingness masks.

mod scenario;
pub mod synthetic;

pub use scenario::{missing_share, parse_mask_spec, standard_scenario, AgeRange, STANDARD_SCENARIOS};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names used when reading a long-format table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub population: String,
    pub age: String,
    pub deaths: String,
    pub exposure: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            population: "population".into(),
            age: "age".into(),
            deaths: "deaths".into(),
            exposure: "exposure".into(),
        }
    }
}

/// Age-indexed deaths and exposures for one or more populations.
///
/// Matrices are stored ages × populations. Ages are consecutive integers.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityTable {
    populations: Vec<String>,
    ages: Vec<i64>,
    deaths: DMatrix<f64>,
    exposure: DMatrix<f64>,
    missing: DMatrix<bool>,
}

impl MortalityTable {
    pub fn new(
        populations: Vec<String>,
        first_age: i64,
        deaths: DMatrix<f64>,
        exposure: DMatrix<f64>,
        missing: DMatrix<bool>,
    ) -> Result<Self> {
        let n_ages = deaths.nrows();
        let n_pops = populations.len();
        if n_pops == 0 || n_ages == 0 {
            return Err(Error::Schema("table needs at least one population and age".into()));
        }
        for m in [deaths.shape(), exposure.shape(), missing.shape()] {
            if m != (n_ages, n_pops) {
                return Err(Error::Schema(format!(
                    "matrix shape {m:?} does not match {n_ages} ages x {n_pops} populations"
                )));
            }
        }
        let unique: BTreeSet<_> = populations.iter().collect();
        if unique.len() != n_pops {
            return Err(Error::Schema("duplicate population identifiers".into()));
        }
        for a in 0..n_ages {
            for j in 0..n_pops {
                if missing[(a, j)] {
                    continue;
                }
                let (d, e) = (deaths[(a, j)], exposure[(a, j)]);
                if !(d.is_finite() && d > 0.0) {
                    return Err(Error::Domain(format!(
                        "observed cell ({}, {}) needs positive deaths, got {d}",
                        populations[j],
                        first_age + a as i64
                    )));
                }
                if !(e.is_finite() && e > 0.0) {
                    return Err(Error::Domain(format!(
                        "observed cell ({}, {}) needs positive exposure, got {e}",
                        populations[j],
                        first_age + a as i64
                    )));
                }
            }
        }
        let ages = (0..n_ages as i64).map(|i| first_age + i).collect();
        Ok(Self {
            populations,
            ages,
            deaths,
            exposure,
            missing,
        })
    }

    pub fn populations(&self) -> &[String] {
        &self.populations
    }

    pub fn ages(&self) -> &[i64] {
        &self.ages
    }

    pub fn deaths(&self) -> &DMatrix<f64> {
        &self.deaths
    }

    pub fn exposure(&self) -> &DMatrix<f64> {
        &self.exposure
    }

    pub fn missing(&self) -> &DMatrix<bool> {
        &self.missing
    }

    pub fn population_index(&self, id: &str) -> Option<usize> {
        self.populations.iter().position(|p| p == id)
    }

    pub fn age_index(&self, age: i64) -> Option<usize> {
        let first = *self.ages.first()?;
        let idx = age - first;
        (idx >= 0 && (idx as usize) < self.ages.len()).then_some(idx as usize)
    }

    /// Keeps only `ids`, in the given order.
    pub fn select_populations(&self, ids: &[String]) -> Result<Self> {
        let idx = ids
            .iter()
            .map(|id| {
                self.population_index(id)
                    .ok_or_else(|| Error::Domain(format!("unknown population '{id}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), idx.len(), |a, j| m[(a, idx[j])]);
        let missing = DMatrix::from_fn(self.ages.len(), idx.len(), |a, j| self.missing[(a, idx[j])]);
        Self::new(
            ids.to_vec(),
            self.ages[0],
            pick(&self.deaths),
            pick(&self.exposure),
            missing,
        )
    }
}

/// Log central mortality rates `log(D/E)` with the table's missingness mask.
/// Missing cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSurface {
    populations: Vec<String>,
    ages: Vec<i64>,
    log_rates: DMatrix<f64>,
    missing: DMatrix<bool>,
}

impl RateSurface {
    /// Builds a surface from log-rates; NaN cells are taken as missing in
    /// addition to those flagged in `missing`.
    pub fn new(
        populations: Vec<String>,
        first_age: i64,
        log_rates: DMatrix<f64>,
        missing: Option<DMatrix<bool>>,
    ) -> Result<Self> {
        let shape = (log_rates.nrows(), populations.len());
        if log_rates.shape() != shape || shape.0 == 0 || shape.1 == 0 {
            return Err(Error::Schema(format!(
                "log-rate matrix {:?} does not match {} populations",
                log_rates.shape(),
                populations.len()
            )));
        }
        let mut mask = missing.unwrap_or_else(|| DMatrix::from_element(shape.0, shape.1, false));
        if mask.shape() != shape {
            return Err(Error::Schema("missing mask shape mismatch".into()));
        }
        let mut log_rates = log_rates;
        for a in 0..shape.0 {
            for j in 0..shape.1 {
                if !log_rates[(a, j)].is_finite() {
                    mask[(a, j)] = true;
                }
                if mask[(a, j)] {
                    log_rates[(a, j)] = f64::NAN;
                }
            }
        }
        let ages = (0..shape.0 as i64).map(|i| first_age + i).collect();
        Ok(Self {
            populations,
            ages,
            log_rates,
            missing: mask,
        })
    }

    pub fn populations(&self) -> &[String] {
        &self.populations
    }

    pub fn ages(&self) -> &[i64] {
        &self.ages
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_populations(&self) -> usize {
        self.populations.len()
    }

    pub fn log_rates(&self) -> &DMatrix<f64> {
        &self.log_rates
    }

    pub fn missing(&self) -> &DMatrix<bool> {
        &self.missing
    }

    pub fn is_missing(&self, age_idx: usize, pop: usize) -> bool {
        self.missing[(age_idx, pop)]
    }

    pub fn value(&self, age_idx: usize, pop: usize) -> f64 {
        self.log_rates[(age_idx, pop)]
    }

    /// Observation vector at an age index (NaN where missing).
    pub fn observation(&self, age_idx: usize) -> DVector<f64> {
        self.log_rates.row(age_idx).transpose()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    /// Missing cells as `(population, age index)`, population-major. Imputed
    /// draws are stored in this order.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for j in 0..self.n_populations() {
            for a in 0..self.n_ages() {
                if self.missing[(a, j)] {
                    cells.push((j, a));
                }
            }
        }
        cells
    }

    pub fn population_index(&self, id: &str) -> Option<usize> {
        self.populations.iter().position(|p| p == id)
    }

    pub fn age_index(&self, age: i64) -> Option<usize> {
        let idx = age - self.ages[0];
        (idx >= 0 && (idx as usize) < self.ages.len()).then_some(idx as usize)
    }

    /// Returns a copy where the given cells carry `values` and are marked
    /// observed. Used to hand complete vectors to the filter.
    pub fn with_filled(&self, cells: &[(usize, usize)], values: &[f64]) -> Self {
        let mut out = self.clone();
        for (&(j, a), &v) in cells.iter().zip(values) {
            out.log_rates[(a, j)] = v;
            out.missing[(a, j)] = false;
        }
        out
    }

    pub fn select_populations(&self, ids: &[String]) -> Result<Self> {
        let idx = ids
            .iter()
            .map(|id| {
                self.population_index(id)
                    .ok_or_else(|| Error::Domain(format!("unknown population '{id}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let rates = DMatrix::from_fn(self.n_ages(), idx.len(), |a, j| self.log_rates[(a, idx[j])]);
        let mask = DMatrix::from_fn(self.n_ages(), idx.len(), |a, j| self.missing[(a, idx[j])]);
        Self::new(ids.to_vec(), self.ages[0], rates, Some(mask))
    }
}

/// Reads a long-format CSV (`population,age,deaths,exposure` by default).
///
/// Rows with an empty or zero deaths field, and ages absent for a
/// population, are marked missing. Populations are ordered by identifier so
/// the result does not depend on row order.
pub fn load_table(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<MortalityTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(file, schema)
}

pub fn read_table<R: std::io::Read>(reader: R, schema: &ColumnSchema) -> Result<MortalityTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let (c_pop, c_age, c_deaths, c_exp) = (
        column(&schema.population)?,
        column(&schema.age)?,
        column(&schema.deaths)?,
        column(&schema.exposure)?,
    );

    // (population, age) -> (deaths, exposure, missing)
    let mut cells: BTreeMap<(String, i64), (f64, f64, bool)> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |message: String| Error::Parse { line, message };

        let pop = field(c_pop).to_string();
        if pop.is_empty() {
            return Err(bad("empty population".into()));
        }
        let age: i64 = field(c_age)
            .parse()
            .map_err(|_| bad(format!("age '{}' is not an integer", field(c_age))))?;
        let deaths_raw = field(c_deaths);
        let deaths = if deaths_raw.is_empty() {
            None
        } else {
            let d: f64 = deaths_raw
                .parse()
                .map_err(|_| bad(format!("deaths '{deaths_raw}' is not a number")))?;
            if !d.is_finite() {
                return Err(bad(format!("deaths '{deaths_raw}' is not finite")));
            }
            if d < 0.0 {
                return Err(Error::Domain(format!("line {line}: negative deaths {d}")));
            }
            Some(d)
        };
        let exp_raw = field(c_exp);
        let exposure = if exp_raw.is_empty() {
            None
        } else {
            Some(
                exp_raw
                    .parse::<f64>()
                    .map_err(|_| bad(format!("exposure '{exp_raw}' is not a number")))?,
            )
        };
        let observed = matches!(deaths, Some(d) if d > 0.0);
        let exposure = match (observed, exposure) {
            (true, None) => return Err(bad("observed row has empty exposure".into())),
            (true, Some(e)) if !(e.is_finite() && e > 0.0) => {
                return Err(Error::Domain(format!(
                    "line {line}: exposure must be positive on an observed row, got {e}"
                )))
            }
            (_, e) => e.unwrap_or(f64::NAN),
        };
        let entry = (deaths.unwrap_or(0.0), exposure, !observed);
        if cells.insert((pop.clone(), age), entry).is_some() {
            return Err(bad(format!("duplicate row for population '{pop}' age {age}")));
        }
    }
    if cells.is_empty() {
        return Err(Error::Schema("table has no data rows".into()));
    }

    let populations: Vec<String> = cells
        .keys()
        .map(|(p, _)| p.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ages: BTreeSet<i64> = cells.keys().map(|(_, a)| *a).collect();
    let first = *ages.first().unwrap();
    let last = *ages.last().unwrap();
    if (last - first + 1) as usize != ages.len() {
        let gap = (first..=last).find(|a| !ages.contains(a)).unwrap();
        return Err(Error::Schema(format!(
            "ages must be consecutive integers; age {gap} is absent for every population"
        )));
    }

    let n_ages = ages.len();
    let n_pops = populations.len();
    let mut deaths = DMatrix::zeros(n_ages, n_pops);
    let mut exposure = DMatrix::from_element(n_ages, n_pops, f64::NAN);
    let mut missing = DMatrix::from_element(n_ages, n_pops, true);
    for ((pop, age), (d, e, miss)) in cells {
        let j = populations.binary_search(&pop).unwrap();
        let a = (age - first) as usize;
        deaths[(a, j)] = d;
        exposure[(a, j)] = e;
        missing[(a, j)] = miss;
    }
    MortalityTable::new(populations, first, deaths, exposure, missing)
}

/// Log central rates at observed cells; missing cells are carried as NaN.
pub fn central_rates(table: &MortalityTable) -> RateSurface {
    let (n_ages, n_pops) = table.deaths.shape();
    let rates = DMatrix::from_fn(n_ages, n_pops, |a, j| {
        if table.missing[(a, j)] {
            f64::NAN
        } else {
            (table.deaths[(a, j)] / table.exposure[(a, j)]).ln()
        }
    });
    RateSurface::new(
        table.populations.clone(),
        table.ages[0],
        rates,
        Some(table.missing.clone()),
    )
    .expect("table invariants guarantee a valid surface")
}

/// `q = 1 - exp(-exp(y))`, kept inside the open unit interval.
pub fn death_probability(log_rate: f64) -> f64 {
    let q = -(-log_rate.exp()).exp_m1();
    q.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn death_probabilities(log_rates: &[f64]) -> Vec<f64> {
    log_rates.iter().map(|&y| death_probability(y)).collect()
}

/// Marks the given ages of one population as missing. The input is left
/// untouched; masking is idempotent.
pub fn mask_ages(
    table: &MortalityTable,
    population: &str,
    ranges: &[AgeRange],
) -> Result<MortalityTable> {
    let j = table
        .population_index(population)
        .ok_or_else(|| Error::Domain(format!("unknown population '{population}'")))?;
    let mut out = table.clone();
    for r in ranges {
        let (lo, hi) = (
            table.age_index(r.start),
            table.age_index(r.end),
        );
        let (Some(lo), Some(hi)) = (lo, hi) else {
            return Err(Error::Domain(format!(
                "mask range {r} outside the age grid {}-{}",
                table.ages[0],
                table.ages[table.ages.len() - 1]
            )));
        };
        for a in lo..=hi {
            out.missing[(a, j)] = true;
        }
    }
    Ok(out)
}

/// Writes a table in the long format read by [`read_table`]; missing cells
/// get an empty deaths field.
pub fn write_table<W: std::io::Write>(table: &MortalityTable, schema: &ColumnSchema, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| Error::Numerical(format!("csv output failed: {e}"));
    w.write_record([&schema.population, &schema.age, &schema.deaths, &schema.exposure])
        .map_err(fail)?;
    for (j, pop) in table.populations.iter().enumerate() {
        for (a, age) in table.ages.iter().enumerate() {
            let deaths = if table.missing[(a, j)] {
                String::new()
            } else {
                table.deaths[(a, j)].to_string()
            };
            w.write_record([
                pop.clone(),
                age.to_string(),
                deaths,
                Some(table.exposure[(a, j)])
                    .filter(|e| e.is_finite())
                    .map_or(String::new(), |e| e.to_string()),
            ])
            .map_err(fail)?;
        }
    }
    w.flush().map_err(|e| Error::io("table output", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_table(text: &str) -> Result<MortalityTable> {
        read_table(text.as_bytes(), &ColumnSchema::default())
    }

    #[test]
    fn single_population_all_observed() {
        let t = csv_table("population,age,deaths,exposure\nM,1,3,100\nM,2,4,100\nM,3,5,90\n").unwrap();
        assert_eq!(t.ages(), &[1, 2, 3]);
        assert!(t.missing().iter().all(|m| !m));
    }

    #[test]
    fn zero_deaths_and_empty_field_are_missing() {
        let t = csv_table(
            "population,age,deaths,exposure\nM,6,2,10\nM,7,0,10\nM,8,,10\nM,9,1,10\n",
        )
        .unwrap();
        assert!(!t.missing()[(0, 0)]);
        assert!(t.missing()[(1, 0)]);
        assert!(t.missing()[(2, 0)]);
    }

    #[test]
    fn absent_rows_are_missing_and_populations_sorted() {
        let t = csv_table("population,age,deaths,exposure\nM,1,1,10\nF,1,1,10\nM,2,2,10\n").unwrap();
        assert_eq!(t.populations(), &["F".to_string(), "M".to_string()]);
        assert!(t.missing()[(1, 0)]);
    }

    #[test]
    fn malformed_row_reports_line() {
        match csv_table("population,age,deaths,exposure\nM,1,1,10\nM,x,1,10\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gap_in_ages_is_schema_error() {
        let err = csv_table("population,age,deaths,exposure\nM,1,1,10\nM,3,1,10\n").unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn nonpositive_exposure_is_domain_error() {
        let err = csv_table("population,age,deaths,exposure\nM,1,1,0\n").unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn custom_schema() {
        let schema = ColumnSchema {
            population: "sex".into(),
            age: "x".into(),
            deaths: "d".into(),
            exposure: "e".into(),
        };
        let t = read_table("sex,x,d,e\nF,0,1,2\n".as_bytes(), &schema).unwrap();
        assert_eq!(t.ages(), &[0]);
    }

    #[test]
    fn central_rate_examples() {
        let t = csv_table("population,age,deaths,exposure\nA,1,10,1000\nA,2,7,7\nA,3,50,200\n").unwrap();
        let y = central_rates(&t);
        assert!((y.value(0, 0) - (-4.605170185988091)).abs() < 1e-12);
        assert_eq!(y.value(1, 0), 0.0);
        assert!((y.value(2, 0) - 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn death_probability_examples() {
        assert!((death_probability(2f64.ln().ln()) - 0.5).abs() < 1e-15);
        assert!((death_probability(0.01f64.ln()) - 0.009950166250831893).abs() < 1e-12);
        assert!(death_probability(-1e6) > 0.0);
        assert!(death_probability(-40.0) < 1e-17);
    }

    #[test]
    fn mask_examples() {
        let t = synthetic::SyntheticConfig::bivariate_default(1..=104)
            .generate(&mut crate::distributions::RngStream::new(1))
            .unwrap()
            .table;
        let female = "female";
        let a = mask_ages(&t, female, &standard_scenario('a').unwrap()).unwrap();
        let share = missing_share(&a, female);
        assert!((share - 0.05).abs() < 0.01, "{share}");
        let f = mask_ages(&t, female, &standard_scenario('f').unwrap()).unwrap();
        assert!((missing_share(&f, female) - 0.43).abs() < 0.01);
        assert_eq!(mask_ages(&t, female, &[]).unwrap(), t);
        assert!(t.missing().iter().all(|m| !m));
        assert!(mask_ages(&t, female, &[AgeRange::new(100, 110).unwrap()]).is_err());
    }

    #[test]
    fn write_then_read_round_trip() {
        let t = csv_table("population,age,deaths,exposure\nM,1,3,100\nM,2,,100\nM,3,5.5,90.25\n").unwrap();
        let mut buf = Vec::new();
        write_table(&t, &ColumnSchema::default(), &mut buf).unwrap();
        let back = read_table(buf.as_slice(), &ColumnSchema::default()).unwrap();
        assert_eq!(back.missing(), t.missing());
        let (a, b) = (central_rates(&back), central_rates(&t));
        for i in [0, 2] {
            assert_eq!(a.value(i, 0), b.value(i, 0));
        }
    }
}
