//! `graduate`: fit, extrapolate and evaluate Bayesian mortality graduations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graduate::commands::{
    self, FitRequest, ForecastRequest, ModelKind, Overrides, SimulateRequest, SEED_ENV,
};
use graduate::data::synthetic::SyntheticConfig;
use graduate::data::{write_table, ColumnSchema};
use graduate::distributions::RngStream;
use graduate::forecast::{Blend, ForecastConfig, Scale};
use graduate::{Error, Result};

#[derive(Parser)]
#[command(name = "graduate", version, about = "Bayesian graduation of mortality tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a mortality table and write summaries, draws and a manifest.
    Fit(FitArgs),
    /// Extrapolate a fit beyond its last age.
    Forecast(ForecastArgs),
    /// Hide ages of one population, refit and score the imputations.
    SimulateMissing(SimulateArgs),
    /// Export fitted curves, bands and raw points in long format.
    Plotdata(PlotArgs),
    /// Write a synthetic two-population table.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SamplerArgs {
    /// Configuration file (TOML, or a run manifest to reproduce a fit).
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed; falls back to the config file, then GRADUATE_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Discount only the per-population diagonal blocks.
    #[arg(long)]
    block_discount: bool,
}

impl SamplerArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            chains: self.chains,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            block_discount: self.block_discount.then_some(true),
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Long-format CSV with population, age, deaths and exposure columns.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also export every draw as long-format CSV.
    #[arg(long)]
    draws_csv: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args)]
struct ForecastArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// Output directory (defaults to the fit directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of ages to add beyond the last fitted age.
    #[arg(long)]
    horizon: usize,
    /// Age at which blended curves coincide.
    #[arg(long)]
    terminal_age: Option<i64>,
    #[arg(long, default_value = "none")]
    blend: Blend,
    /// Discount factor beyond the last age (default: the one in force there).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Scenario letter a-f or age ranges such as `4-10,15-17`.
    #[arg(long)]
    scenario: String,
    /// Population whose ages are hidden (default: the last one).
    #[arg(long)]
    target: Option<String>,
    /// Comma-separated models: univariate, joint, joint-ct.
    #[arg(long, value_delimiter = ',', default_value = "univariate,joint,joint-ct")]
    models: Vec<ModelKind>,
    /// Scale for the metrics: log-rate or rate.
    #[arg(long, default_value = "log-rate")]
    scale: String,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    first_age: i64,
    #[arg(long, default_value_t = 100)]
    last_age: i64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_scale(s: &str) -> Result<Scale> {
    match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
        "log-rate" | "log" => Ok(Scale::LogRate),
        "rate" => Ok(Scale::Rate),
        other => Err(Error::Config(format!(
            "unknown scale '{other}' (expected log-rate or rate)"
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let env_seed = std::env::var(SEED_ENV).ok();
    match cli.command {
        Command::Fit(a) => {
            let outcome = commands::cmd_fit(&FitRequest {
                data: a.data,
                config: a.sampler.config.clone(),
                out: a.out.clone(),
                overrides: a.sampler.overrides(),
                env_seed,
                draws_csv: a.draws_csv,
            })?;
            println!(
                "fitted {} population(s), ages {}-{}, {} draws -> {}",
                outcome.manifest.populations.len(),
                outcome.manifest.first_age,
                outcome.manifest.last_age,
                outcome.manifest.n_draws,
                a.out.display()
            );
        }
        Command::Forecast(a) => {
            let outcome = commands::cmd_forecast(&ForecastRequest {
                fit_dir: a.fit,
                out: a.out,
                config: ForecastConfig {
                    horizon: a.horizon,
                    terminal_age: a.terminal_age,
                    blend: a.blend,
                    delta: a.delta,
                    ..ForecastConfig::new(a.horizon)
                },
                seed: a.seed,
            })?;
            match outcome.crossing {
                Some(c) => println!(
                    "unblended median curves of {} and {} first cross at age {}",
                    c.first, c.second, c.age
                ),
                None => println!("no crossing of unblended median curves"),
            }
        }
        Command::SimulateMissing(a) => {
            let outcome = commands::cmd_simulate_missing(&SimulateRequest {
                data: a.data,
                config: a.sampler.config.clone(),
                out: a.out,
                scenario: a.scenario,
                target: a.target,
                models: a.models,
                scale: parse_scale(&a.scale)?,
                overrides: a.sampler.overrides(),
                env_seed,
            })?;
            print!("{}", outcome.report.to_table());
        }
        Command::Plotdata(a) => {
            let rows = commands::cmd_plotdata(&a.fit, a.out.as_deref())?;
            println!("wrote {} rows", rows.len());
        }
        Command::Synth(a) => {
            if a.last_age < a.first_age {
                return Err(Error::Domain("last age precedes first age".into()));
            }
            let data = SyntheticConfig::bivariate_default(a.first_age..=a.last_age)
                .generate(&mut RngStream::new(a.seed))?;
            commands::write_atomic(&a.out, |w| write_table(&data.table, &ColumnSchema::default(), w))?;
            println!("wrote {}", a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            return report(&Error::Config(message.trim().trim_start_matches("error: ").to_string()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

/// One JSON line on stderr; the exit code follows the error category.
fn report(e: &Error) -> ExitCode {
    let category = e.category();
    let line = serde_json::json!({ "category": category.as_str(), "message": e.to_string() });
    eprintln!("{line}");
    ExitCode::from(category.exit_code() as u8)
}
