use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commontrends::grid::Region;
use commontrends::YearMonth;
use commontrends_cli::config::RunConfig;
use commontrends_cli::pipeline::{Failure, Run};
use commontrends_cli::simulate::{simulate, SimulateOptions};

/// Structural decomposition and common-trend extraction for gridded
/// monthly data.
#[derive(Parser)]
#[command(name = "commontrends", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the structural model to every box series at every depth.
    Decompose(RunArgs),
    /// Identify common trends per depth from the partial residuals.
    CommonTrends(RunArgs),
    /// Change points and stratification from existing outputs.
    Report(RunArgs),
    /// Write a planted synthetic grid with its true factors.
    Simulate(SimArgs),
}

/// Overrides for the matching config keys.
#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply to omitted keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    input_format: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    output_format: Option<String>,
    /// Comma-separated depths in metres.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    depths: Option<Vec<f64>>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of common trends.
    #[arg(long)]
    rank: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.input {
            cfg.input.path = v.clone();
        }
        if let Some(v) = &self.input_format {
            cfg.input.format = v.clone();
        }
        if let Some(v) = &self.output {
            cfg.output.dir = v.clone();
        }
        if let Some(v) = &self.output_format {
            cfg.output.format = v.clone();
        }
        if let Some(v) = &self.depths {
            cfg.depths = v.clone();
            // pairs left without both depths would otherwise fail validation
            cfg.report.stratification.retain(|pair| pair.iter().all(|d| v.contains(d)));
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.rank {
            cfg.subspace.rank = v;
            cfg.subspace.energy = None;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, short, default_value = "sim")]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,150,200")]
    depths: Vec<f64>,
    #[arg(long, default_value_t = 564)]
    months: usize,
    /// First month, `YYYY-MM`.
    #[arg(long, default_value = "1958-01")]
    start: String,
    /// Cell spacing in degrees.
    #[arg(long, default_value_t = 5.0)]
    resolution: f64,
    /// Factor sizes; their count is the number of planted trends.
    #[arg(long, value_delimiter = ',', default_value = "4,3,2,1")]
    amplitudes: Vec<f64>,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    seasonal: f64,
    /// `lat_min,lat_max,lon_min,lon_max`.
    #[arg(long, value_delimiter = ',')]
    region: Option<Vec<f64>>,
}

fn parse_month(s: &str) -> Result<YearMonth> {
    let (y, m) = s.split_once('-').context("expected YYYY-MM")?;
    Ok(YearMonth::new(y.parse()?, m.parse()?)?)
}

fn report_failures(failures: &[Failure]) -> ExitCode {
    if failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    eprintln!("{} failure(s), see manifest.json:", failures.len());
    for f in failures {
        eprintln!("  {} m {} [{}]: {}", f.depth_m, f.series_id, f.stage, f.message);
    }
    ExitCode::from(2)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let failures = match cli.command {
        Command::Decompose(a) => Run::new(&a.config()?)?.decompose()?,
        Command::CommonTrends(a) => Run::new(&a.config()?)?.common_trends()?,
        Command::Report(a) => Run::new(&a.config()?)?.report()?,
        Command::Simulate(a) => {
            let region = match a.region.as_deref() {
                Some(&[lat_min, lat_max, lon_min, lon_max]) => Region {
                    lat_min,
                    lat_max,
                    lon_min,
                    lon_max,
                },
                None => Region::NORTH_PACIFIC,
                Some(_) => anyhow::bail!("--region takes lat_min,lat_max,lon_min,lon_max"),
            };
            simulate(&SimulateOptions {
                dir: a.output,
                seed: a.seed,
                depths: a.depths,
                months: a.months,
                start: parse_month(&a.start)?,
                resolution: a.resolution,
                amplitudes: a.amplitudes,
                noise_sd: a.noise,
                seasonal_amplitude: a.seasonal,
                region,
                ..SimulateOptions::default()
            })?;
            Vec::new()
        }
    };
    Ok(report_failures(&failures))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
