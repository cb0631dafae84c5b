use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use super::fit::load_fit;
use super::{ensure_dir, files, write_atomic};
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::forecast::{
    blend_convergence, extrapolate, extrapolation_factors, first_crossing, summarize_predictive,
    Blend, Crossing, ForecastConfig, PredictiveDraws, PredictiveSummary,
};

/// RNG stream reserved for extrapolation; chain streams start at 1.
pub const FORECAST_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone)]
pub struct ForecastRequest {
    pub fit_dir: PathBuf,
    /// Output directory; the fit directory when absent.
    pub out: Option<PathBuf>,
    pub config: ForecastConfig,
    /// Seed for extrapolation noise; the fit's seed when absent.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ForecastOutcome {
    pub summary: PredictiveSummary,
    /// Summary before blending (equal to `summary` without blending).
    pub unblended: PredictiveSummary,
    /// First age at which unblended median curves change order.
    pub crossing: Option<Crossing>,
    pub draws: PredictiveDraws,
}

#[derive(Serialize)]
struct ForecastRecord<'a> {
    fit_dir: String,
    seed: u64,
    last_age: i64,
    config: &'a ForecastConfig,
    discount_factors: Vec<f64>,
    crossing: &'a Option<Crossing>,
}

/// Extends a fit beyond its last age and writes summaries on all scales.
pub fn cmd_forecast(req: &ForecastRequest) -> Result<ForecastOutcome> {
    let fit = load_fit(&req.fit_dir)?;
    let last_age = fit.manifest.last_age;
    req.config.validate(last_age)?;
    let factors = extrapolation_factors(
        &fit.spec,
        &fit.schedule,
        last_age,
        &fit.manifest.populations,
        req.config.delta,
    )?;
    let seed = req.seed.unwrap_or(fit.manifest.config.gibbs.seed);
    let mut rng = RngStream::with_stream(seed, FORECAST_STREAM);
    let raw = extrapolate(
        &fit.draws,
        &fit.spec,
        &factors,
        fit.manifest.config.gibbs.discount_mode(),
        &req.config,
        &mut rng,
    )?;
    let unblended = summarize_predictive(&fit.draws, &raw, req.config.interval)?;
    let crossing = first_crossing(&unblended, last_age);
    let (draws, summary) = match (req.config.blend, req.config.terminal_age) {
        (Blend::Linear, Some(t)) => {
            let blended = blend_convergence(&raw, last_age, t);
            let s = summarize_predictive(&fit.draws, &blended, req.config.interval)?;
            (blended, s)
        }
        _ => (raw, unblended.clone()),
    };
    if let Some(c) = &crossing {
        log::info!(
            "unblended median curves of {} and {} cross at age {}",
            c.first,
            c.second,
            c.age
        );
    }

    let out = req.out.clone().unwrap_or_else(|| req.fit_dir.clone());
    ensure_dir(&out)?;
    write_atomic(&out.join(files::FORECAST_SUMMARY), |w| summary.write_csv(w))?;
    let record = ForecastRecord {
        fit_dir: req.fit_dir.display().to_string(),
        seed,
        last_age,
        config: &req.config,
        discount_factors: factors.iter().copied().collect(),
        crossing: &crossing,
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Numerical(format!("forecast record serialization failed: {e}")))?;
    write_atomic(&out.join(files::FORECAST_MANIFEST), |w| {
        w.write_all(json.as_bytes())
            .map_err(|e| Error::io(files::FORECAST_MANIFEST, e))
    })?;
    Ok(ForecastOutcome {
        summary,
        unblended,
        crossing,
        draws,
    })
}
