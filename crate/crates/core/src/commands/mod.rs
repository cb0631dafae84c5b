//! Command implementations shared by the command-line front end and the
//! test suites: fitting, forecasting, missing-data simulation studies and
//! plot-data export. Each writes its artifacts atomically into a directory.

pub mod config;
mod fit;
mod forecast;
mod manifest;
mod plotdata;
mod simulate;

pub use config::{ConfigFile, DiscountEntry, Overrides, PriorMean, RunConfig, SEED_ENV};
pub use fit::{cmd_fit, fit_surface, load_fit, FitOutcome, FitRequest, LoadedFit};
pub use forecast::{cmd_forecast, ForecastOutcome, ForecastRequest, FORECAST_STREAM};
pub use manifest::{DataRecord, RunManifest};
pub use plotdata::{cmd_plotdata, PlotRow};
pub use simulate::{
    cmd_simulate_missing, evaluate_scenario, ModelKind, ScenarioOutcome, SimulateRequest,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// File names inside a fit directory.
pub mod files {
    pub const SUMMARY: &str = "summary.csv";
    pub const STATES: &str = "states.csv";
    pub const VARIANCE: &str = "variance.csv";
    pub const DRAWS_BIN: &str = "draws.bin";
    pub const DRAWS_CSV: &str = "draws.csv";
    pub const OBSERVED: &str = "observed.csv";
    pub const MANIFEST: &str = "manifest.json";
    pub const FORECAST_SUMMARY: &str = "forecast_summary.csv";
    pub const FORECAST_MANIFEST: &str = "forecast.json";
    pub const PLOTDATA: &str = "plotdata.csv";
    pub const REPORT_CSV: &str = "report.csv";
    pub const REPORT_TXT: &str = "report.txt";
}

/// Writes `path` through a temporary sibling file that is renamed into
/// place once complete, so readers never see a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("'{}' is not a file path", path.display())))?;
    let tmp: PathBuf = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let filled = fill(&mut w).and_then(|()| {
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        w.get_ref().sync_all().map_err(|e| Error::io(&tmp, e))
    });
    if let Err(e) = filled {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_atomic(&path, |w| w.write_all(b"hello").map_err(|e| Error::io("a", e))).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "hello");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn failed_write_keeps_previous_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        std::fs::write(&path, "old").unwrap();
        let r = write_atomic(&path, |_| Err(Error::Numerical("boom".into())));
        assert!(r.is_err());
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "old");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn checksum_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, "abc").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
