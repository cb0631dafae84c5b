//! Age ranges and the standard missing-data scenarios.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MortalityTable;
use crate::error::{Error, Result};

/// Inclusive integer age range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeRange {
    pub start: i64,
    pub end: i64,
}

impl AgeRange {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end < start {
            return Err(Error::Domain(format!("empty age range {start}-{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, age: i64) -> bool {
        (self.start..=self.end).contains(&age)
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Display for AgeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start == self.end {
            write!(f, "{}", self.start)
        } else {
            write!(f, "{}-{}", self.start, self.end)
        }
    }
}

impl FromStr for AgeRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid age range '{s}'"));
        let s = s.trim();
        match s.split_once('-') {
            Some((a, b)) => Self::new(
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ),
            None => {
                let a = s.parse().map_err(|_| bad())?;
                Self::new(a, a)
            }
        }
    }
}

/// Letter and masked age groups of the six standard scenarios, each applied
/// to a single target population.
pub const STANDARD_SCENARIOS: [(char, &[(i64, i64)]); 6] = [
    ('a', &[(4, 8)]),
    ('b', &[(4, 10), (15, 17)]),
    ('c', &[(3, 16)]),
    ('d', &[(1, 25)]),
    ('e', &[(1, 16), (23, 41)]),
    ('f', &[(1, 45)]),
];

pub fn standard_scenario(letter: char) -> Option<Vec<AgeRange>> {
    STANDARD_SCENARIOS
        .iter()
        .find(|(l, _)| *l == letter.to_ascii_lowercase())
        .map(|(_, ranges)| {
            ranges
                .iter()
                .map(|&(a, b)| AgeRange { start: a, end: b })
                .collect()
        })
}

/// Parses a mask such as `c`, `3-16` or `4-10,15-17`. A bare letter selects
/// one of the standard scenarios; an empty string is an empty mask.
pub fn parse_mask_spec(spec: &str) -> Result<Vec<AgeRange>> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Ok(Vec::new());
    }
    let mut chars = spec.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_ascii_alphabetic() {
            return standard_scenario(c)
                .ok_or_else(|| Error::Config(format!("unknown scenario '{c}'")));
        }
    }
    spec.split(',').map(str::parse).collect()
}

/// Fraction of a population's cells that are missing.
pub fn missing_share(table: &MortalityTable, population: &str) -> f64 {
    let Some(j) = table.population_index(population) else {
        return 0.0;
    };
    let col = table.missing().column(j);
    col.iter().filter(|&&m| m).count() as f64 / col.len() as f64
}
