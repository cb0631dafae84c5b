//! Run configuration: a TOML file, command-line overrides and an environment
//! seed fallback, resolved into one concrete [`RunConfig`].
//!
//! ```toml
//! populations = ["male", "female"]
//! common_term = true
//! iterations = 4000
//! burn_in = 1000
//!
//! [[discount]]
//! ages = "1-5"
//! delta = 0.99
//!
//! [[discount]]
//! ages = "6+"
//! delta = 0.85
//!
//! [[discount]]
//! ages = "6-35"
//! delta = 0.80
//! population = "female"
//! ```

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::ColumnSchema;
use crate::error::{Error, Result};
use crate::model::{
    build_common_term, build_local_linear, initial_prior, wishart_prior, AgeSpan,
    DiscountSchedule, DiscountSegment, DlmSpec, DEFAULT_D0, DEFAULT_PRIOR_SCALE,
    DEFAULT_S0_SCALE,
};
use crate::sampler::GibbsConfig;

/// Discount factor used when the configuration lists no segments.
pub const DEFAULT_DELTA: f64 = 0.95;

/// Environment variable consulted for the seed when neither a flag nor the
/// configuration file sets one.
pub const SEED_ENV: &str = "GRADUATE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountEntry {
    pub ages: String,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<String>,
}

/// Prior mean of the initial state: one value for every component or a
/// full vector in state order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorMean {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// Contents of a configuration file; every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub populations: Option<Vec<String>>,
    pub common_term: Option<bool>,
    pub prior_mean: Option<PriorMean>,
    pub prior_scale: Option<f64>,
    pub d0: Option<f64>,
    pub s0_scale: Option<f64>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub chains: Option<usize>,
    pub block_discount: Option<bool>,
    pub columns: Option<ColumnSchema>,
    #[serde(default)]
    pub discount: Vec<DiscountEntry>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML file, or the `config` object of a run manifest when the
    /// path ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let config = manifest
                .get("config")
                .ok_or_else(|| Error::Config("manifest has no 'config' entry".into()))?;
            let resolved: RunConfig = serde_json::from_value(config.clone())
                .map_err(|e| Error::Config(e.to_string()))?;
            return Ok(resolved.into_file());
        }
        Self::parse(&text)
    }
}

/// Settings given on the command line; they win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub block_discount: Option<bool>,
}

/// Fully resolved configuration, echoed into the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub populations: Option<Vec<String>>,
    pub common_term: bool,
    pub prior_mean: PriorMean,
    pub prior_scale: f64,
    pub d0: f64,
    pub s0_scale: f64,
    pub columns: ColumnSchema,
    pub discount: Vec<DiscountEntry>,
    pub gibbs: GibbsConfig,
}

impl RunConfig {
    /// Applies precedence flags > file > environment seed > defaults.
    pub fn resolve(file: ConfigFile, overrides: &Overrides, env_seed: Option<&str>) -> Result<Self> {
        let defaults = GibbsConfig::default();
        let env_seed = env_seed
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}='{s}' is not an unsigned integer")))
            })
            .transpose()?;
        let gibbs = GibbsConfig {
            iterations: overrides.iterations.or(file.iterations).unwrap_or(defaults.iterations),
            burn_in: overrides.burn_in.or(file.burn_in).unwrap_or(defaults.burn_in),
            thin: overrides.thin.or(file.thin).unwrap_or(defaults.thin),
            seed: overrides.seed.or(file.seed).or(env_seed).unwrap_or(defaults.seed),
            chains: overrides.chains.or(file.chains).unwrap_or(defaults.chains),
            block_discount: overrides
                .block_discount
                .or(file.block_discount)
                .unwrap_or(defaults.block_discount),
        };
        gibbs.validate()?;
        let config = Self {
            populations: file.populations,
            common_term: file.common_term.unwrap_or(false),
            prior_mean: file.prior_mean.unwrap_or(PriorMean::Scalar(0.0)),
            prior_scale: file.prior_scale.unwrap_or(DEFAULT_PRIOR_SCALE),
            d0: file.d0.unwrap_or(DEFAULT_D0),
            s0_scale: file.s0_scale.unwrap_or(DEFAULT_S0_SCALE),
            columns: file.columns.unwrap_or_default(),
            discount: file.discount,
            gibbs,
        };
        // Surface segment errors at load time rather than mid-run.
        config.schedule(0)?;
        Ok(config)
    }

    fn into_file(self) -> ConfigFile {
        ConfigFile {
            populations: self.populations,
            common_term: Some(self.common_term),
            prior_mean: Some(self.prior_mean),
            prior_scale: Some(self.prior_scale),
            d0: Some(self.d0),
            s0_scale: Some(self.s0_scale),
            seed: Some(self.gibbs.seed),
            iterations: Some(self.gibbs.iterations),
            burn_in: Some(self.gibbs.burn_in),
            thin: Some(self.gibbs.thin),
            chains: Some(self.gibbs.chains),
            block_discount: Some(self.gibbs.block_discount),
            columns: Some(self.columns),
            discount: self.discount,
        }
    }

    /// Discount schedule; with no entries a uniform [`DEFAULT_DELTA`] from
    /// `first_age` on.
    pub fn schedule(&self, first_age: i64) -> Result<DiscountSchedule> {
        if self.discount.is_empty() {
            return DiscountSchedule::uniform(DEFAULT_DELTA, first_age);
        }
        let mut base = Vec::new();
        let mut per_pop: Vec<(String, Vec<DiscountSegment>)> = Vec::new();
        for e in &self.discount {
            let seg = DiscountSegment::new(e.ages.parse::<AgeSpan>()?, e.delta)?;
            match &e.population {
                None => base.push(seg),
                Some(p) => match per_pop.iter_mut().find(|(q, _)| q == p) {
                    Some((_, v)) => v.push(seg),
                    None => per_pop.push((p.clone(), vec![seg])),
                },
            }
        }
        if base.is_empty() {
            return Err(Error::Config(
                "discount entries without a population are required for the base schedule".into(),
            ));
        }
        let mut schedule = DiscountSchedule::new(base)?;
        for (p, segs) in per_pop {
            schedule = schedule.with_override(p, segs)?;
        }
        Ok(schedule)
    }

    /// Model for `n_populations` series under this configuration.
    pub fn spec(&self, n_populations: usize) -> Result<DlmSpec> {
        self.spec_with(n_populations, self.common_term)
    }

    pub fn spec_with(&self, n_populations: usize, common_term: bool) -> Result<DlmSpec> {
        let spec = if common_term {
            build_common_term(n_populations)?
        } else {
            build_local_linear(n_populations)?
        };
        let p = spec.state_dim();
        let mean = match &self.prior_mean {
            PriorMean::Scalar(v) => DVector::from_element(p, *v),
            PriorMean::Vector(v) => DVector::from_column_slice(v),
        };
        let (m0, c0) = initial_prior(p, Some(mean), self.prior_scale)?;
        spec.with_initial_prior(m0, c0)?
            .with_wishart(wishart_prior(self.d0, self.s0_scale, n_populations)?)
    }
}
