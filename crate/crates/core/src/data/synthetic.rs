//! Synthetic multi-population tables with correlated observational noise.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::MortalityTable;
use crate::distributions::mvn_sample;
use crate::error::{Error, Result};

/// Parametric central-rate curve
/// `m(x) = a e^{-b x} + c e^{-((x-d)/e)^2} + k + g e^{h x}`:
/// childhood decline, accident hump, a flat floor and Gompertz senescence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MortalityLaw {
    pub child_level: f64,
    pub child_decay: f64,
    pub hump_height: f64,
    pub hump_age: f64,
    pub hump_width: f64,
    pub floor: f64,
    pub senescent_level: f64,
    pub senescent_rate: f64,
}

impl MortalityLaw {
    pub const MALE_LIKE: Self = Self {
        child_level: 5e-4,
        child_decay: 0.5,
        hump_height: 6e-4,
        hump_age: 21.0,
        hump_width: 6.0,
        floor: 5e-5,
        senescent_level: 2e-5,
        senescent_rate: 0.1,
    };

    pub const FEMALE_LIKE: Self = Self {
        child_level: 4e-4,
        child_decay: 0.5,
        hump_height: 1.5e-4,
        hump_age: 20.0,
        hump_width: 7.0,
        floor: 4e-5,
        senescent_level: 1.2e-5,
        senescent_rate: 0.103,
    };

    pub fn rate(&self, age: f64) -> f64 {
        let z = (age - self.hump_age) / self.hump_width;
        self.child_level * (-self.child_decay * age).exp()
            + self.hump_height * (-z * z).exp()
            + self.floor
            + self.senescent_level * (self.senescent_rate * age).exp()
    }

    pub fn log_rate(&self, age: f64) -> f64 {
        self.rate(age).ln()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub ages: RangeInclusive<i64>,
    pub populations: Vec<(String, MortalityLaw)>,
    /// Observational standard deviation per population (log scale).
    pub noise_sd: Vec<f64>,
    /// Common pairwise correlation of the observational errors.
    pub correlation: f64,
    /// Exposure assigned to every cell.
    pub exposure: f64,
}

/// Generated table plus the noiseless and noisy log-rates (ages × pops).
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub table: MortalityTable,
    pub truth: DMatrix<f64>,
    pub observed: DMatrix<f64>,
}

impl SyntheticConfig {
    /// Male-like and female-like curves, noise sd 0.1, correlation 0.9.
    pub fn bivariate_default(ages: RangeInclusive<i64>) -> Self {
        Self {
            ages,
            populations: vec![
                ("male".into(), MortalityLaw::MALE_LIKE),
                ("female".into(), MortalityLaw::FEMALE_LIKE),
            ],
            noise_sd: vec![0.1, 0.1],
            correlation: 0.9,
            exposure: 1e5,
        }
    }

    pub fn noise_covariance(&self) -> DMatrix<f64> {
        let j = self.populations.len();
        DMatrix::from_fn(j, j, |a, b| {
            let rho = if a == b { 1.0 } else { self.correlation };
            rho * self.noise_sd[a] * self.noise_sd[b]
        })
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SyntheticData> {
        let j = self.populations.len();
        if self.noise_sd.len() != j {
            return Err(Error::Domain("one noise sd per population required".into()));
        }
        if self.exposure <= 0.0 {
            return Err(Error::Domain("exposure must be positive".into()));
        }
        let first = *self.ages.start();
        let n = (*self.ages.end() - first + 1).max(0) as usize;
        let cov = self.noise_covariance();
        let truth = DMatrix::from_fn(n, j, |a, p| {
            self.populations[p].1.log_rate((first + a as i64) as f64)
        });
        let mut observed = truth.clone();
        let zero = DVector::zeros(j);
        for a in 0..n {
            let e = mvn_sample(&zero, &cov, rng)?;
            for p in 0..j {
                observed[(a, p)] += e[p];
            }
        }
        let deaths = observed.map(|y| self.exposure * y.exp());
        let exposure = DMatrix::from_element(n, j, self.exposure);
        let table = MortalityTable::new(
            self.populations.iter().map(|(id, _)| id.clone()).collect(),
            first,
            deaths,
            exposure,
            DMatrix::from_element(n, j, false),
        )?;
        Ok(SyntheticData {
            table,
            truth,
            observed,
        })
    }
}
