use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::{ConfigFile, Overrides, RunConfig};
use super::manifest::{DataRecord, RunManifest};
use super::{ensure_dir, files, sha256_file, write_atomic};
use crate::data::{central_rates, load_table, MortalityTable, RateSurface};
use crate::error::{Error, Result};
use crate::metrics::Cell;
use crate::model::{DiscountSchedule, DlmSpec};
use crate::sampler::archive::{read_binary, write_binary, write_long_csv};
use crate::sampler::{run_gibbs, summarize, DrawsMeta, Interval, PosteriorDraws, PosteriorSummary};

#[derive(Debug, Clone, Default)]
pub struct FitRequest {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: Overrides,
    /// Value of the seed environment variable, if set.
    pub env_seed: Option<String>,
    /// Also export every draw as long-format CSV.
    pub draws_csv: bool,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub manifest: RunManifest,
    pub spec: DlmSpec,
    pub draws: PosteriorDraws,
    pub summary: PosteriorSummary,
}

pub(crate) fn load_config(path: Option<&Path>, overrides: &Overrides, env_seed: Option<&str>) -> Result<RunConfig> {
    let file = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    RunConfig::resolve(file, overrides, env_seed)
}

pub(crate) fn load_selected(data: &Path, config: &RunConfig) -> Result<MortalityTable> {
    let table = load_table(data, &config.columns)?;
    match &config.populations {
        Some(ids) => table.select_populations(ids),
        None => Ok(table),
    }
}

/// Builds the model for `surface` and runs the sampler.
pub fn fit_surface(
    config: &RunConfig,
    surface: &RateSurface,
    common_term: bool,
) -> Result<(DlmSpec, DiscountSchedule, PosteriorDraws)> {
    let spec = config.spec_with(surface.n_populations(), common_term)?;
    let ages = surface.ages();
    let schedule = config.schedule(ages[0])?;
    schedule.validate_cover(ages[0], ages[ages.len() - 1])?;
    let draws = run_gibbs(&spec, surface, &schedule, &config.gibbs)?;
    Ok((spec, schedule, draws))
}

#[derive(Serialize)]
struct ObservedRow<'a> {
    population: &'a str,
    age: i64,
    log_rate: Option<f64>,
}

fn write_observed<W: Write>(surface: &RateSurface, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for (j, pop) in surface.populations().iter().enumerate() {
        for (a, &age) in surface.ages().iter().enumerate() {
            csv.serialize(ObservedRow {
                population: pop,
                age,
                log_rate: (!surface.is_missing(a, j)).then(|| surface.value(a, j)),
            })
            .map_err(|e| Error::Numerical(format!("csv serialization failed: {e}")))?;
        }
    }
    csv.flush().map_err(|e| Error::io("observed.csv", e))
}

/// Fits the configured model to a data file and writes the fit directory.
pub fn cmd_fit(req: &FitRequest) -> Result<FitOutcome> {
    let started = Instant::now();
    let config = load_config(req.config.as_deref(), &req.overrides, req.env_seed.as_deref())?;
    let table = load_selected(&req.data, &config)?;
    let surface = central_rates(&table);
    let (spec, _, draws) = fit_surface(&config, &surface, config.common_term)?;
    let summary = summarize(&spec, &draws, Interval::default())?;

    let out = &req.out;
    ensure_dir(out)?;
    write_atomic(&out.join(files::SUMMARY), |w| summary.write_csv(w))?;
    write_atomic(&out.join(files::STATES), |w| summary.write_states_csv(w))?;
    write_atomic(&out.join(files::VARIANCE), |w| summary.write_variance_csv(w))?;
    write_atomic(&out.join(files::OBSERVED), |w| write_observed(&surface, w))?;
    write_atomic(&out.join(files::DRAWS_BIN), |w| write_binary(&draws, w))?;
    if req.draws_csv {
        write_atomic(&out.join(files::DRAWS_CSV), |w| write_long_csv(&draws, &spec, w))?;
    }

    let ages = surface.ages();
    let manifest = RunManifest {
        tool: "graduate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        data: DataRecord {
            path: req.data.display().to_string(),
            sha256: sha256_file(&req.data)?,
        },
        populations: surface.populations().to_vec(),
        first_age: ages[0],
        last_age: ages[ages.len() - 1],
        state_labels: spec.state_labels(surface.populations()),
        missing_cells: draws
            .missing_cells
            .iter()
            .map(|&(j, a)| Cell {
                population: surface.populations()[j].clone(),
                age: ages[a],
            })
            .collect(),
        n_draws: draws.len(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        checks: draws.meta.checks.clone(),
        diagnostics: draws.meta.diagnostics.clone(),
        config,
    };
    let json = manifest.to_json()?;
    write_atomic(&out.join(files::MANIFEST), |w| {
        w.write_all(json.as_bytes()).map_err(|e| Error::io(files::MANIFEST, e))
    })?;
    for check in manifest.checks.iter().filter(|c| !c.passed) {
        log::warn!("invariant check '{}' failed: {}", check.name, check.detail);
    }
    Ok(FitOutcome {
        manifest,
        spec,
        draws,
        summary,
    })
}

/// A fit directory read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedFit {
    pub manifest: RunManifest,
    pub spec: DlmSpec,
    pub schedule: DiscountSchedule,
    pub draws: PosteriorDraws,
}

pub fn load_fit(dir: &Path) -> Result<LoadedFit> {
    let path = dir.join(files::MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = RunManifest::from_json(&text)?;
    let spec = manifest
        .config
        .spec(manifest.populations.len())?;
    let schedule = manifest.config.schedule(manifest.first_age)?;
    let path = dir.join(files::DRAWS_BIN);
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let draws = read_binary(
        std::io::BufReader::new(file),
        manifest.populations.clone(),
        manifest.ages(),
        manifest.missing_indices()?,
        DrawsMeta {
            config: manifest.config.gibbs.clone(),
            checks: manifest.checks.clone(),
            diagnostics: manifest.diagnostics.clone(),
        },
    )?;
    if draws.state_dim != spec.state_dim() {
        return Err(Error::Schema(format!(
            "draw archive has state dimension {}, configuration implies {}",
            draws.state_dim,
            spec.state_dim()
        )));
    }
    Ok(LoadedFit {
        manifest,
        spec,
        schedule,
        draws,
    })
}
