//! Split-chain potential scale reduction and effective sample size.

use serde::{Deserialize, Serialize};

use super::PosteriorDraws;
use crate::model::DlmSpec;
use crate::stats::{mean, variance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostic {
    pub name: String,
    /// `None` when fewer than four stored draws per chain make it undefined.
    pub rhat: Option<f64>,
    pub ess: f64,
}

fn halves(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect()
}

/// Split-`R̂`: every chain is cut in half and the classic between/within
/// variance ratio is computed over the halves. Constant input gives 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let parts = halves(chains);
    let n = parts.iter().map(|p| p.len()).min()?;
    if n < 2 || parts.len() < 2 {
        return None;
    }
    let means: Vec<f64> = parts.iter().map(|p| mean(&p[..n])).collect();
    let w = parts.iter().map(|p| variance(&p[..n])).sum::<f64>() / parts.len() as f64;
    let b = n as f64 * variance(&means);
    if w == 0.0 {
        return Some(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    Some((var_plus / w).sqrt())
}

/// Effective sample size from chain-averaged autocorrelations truncated by
/// Geyer's initial positive sequence.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let total = (n * chains.len()) as f64;
    if n < 4 {
        return total;
    }
    let acov: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| {
            let c = &c[..n];
            let m = mean(c);
            (0..n)
                .map(|lag| {
                    (0..n - lag).map(|t| (c[t] - m) * (c[t + lag] - m)).sum::<f64>() / n as f64
                })
                .collect()
        })
        .collect();
    let var0 = acov.iter().map(|a| a[0]).sum::<f64>() / chains.len() as f64;
    if var0 <= 0.0 {
        return total;
    }
    let rho = |lag: usize| acov.iter().map(|a| a[lag]).sum::<f64>() / chains.len() as f64 / var0;
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    total / tau.max(1.0 / total.ln().max(1.0))
}

fn diagnose(name: String, draws: &PosteriorDraws, value: impl Fn(usize) -> f64) -> ParamDiagnostic {
    let chains: Vec<Vec<f64>> = (0..draws.n_chains())
        .map(|c| draws.chain_indices(c).into_iter().map(&value).collect())
        .collect();
    ParamDiagnostic {
        name,
        rhat: split_rhat(&chains),
        ess: effective_sample_size(&chains),
    }
}

/// Diagnostics for every element of `V` and for the fitted log-rate of each
/// population at the first, middle and last age.
pub fn standard_diagnostics(spec: &DlmSpec, draws: &PosteriorDraws) -> Vec<ParamDiagnostic> {
    if draws.is_empty() {
        return Vec::new();
    }
    let j = draws.n_populations();
    let mut out = Vec::new();
    for a in 0..j {
        for b in a..j {
            out.push(diagnose(
                format!("v[{},{}]", draws.populations[a], draws.populations[b]),
                draws,
                |d| draws.v[d][(a, b)],
            ));
        }
    }
    let n = draws.n_ages();
    let mut ages = vec![0, n / 2, n - 1];
    ages.dedup();
    for &idx in &ages {
        for k in 0..j {
            out.push(diagnose(
                format!("fitted[{},{}]", draws.populations[k], draws.ages[idx]),
                draws,
                |d| draws.fitted(spec, d, idx)[k],
            ));
        }
    }
    out
}
