//! Run configuration: a TOML file with explicit keys, every default filled
//! in and echoed next to the outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use commontrends::analysis::ChangePointOptions;
use commontrends::grid::{BoxOptions, Format, Region};
use commontrends::optim::NelderMeadOptions;
use commontrends::structural::{CycleMode, FitOptions, StructuralSpec};
use commontrends::subspace::{HankelSpec, RankPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    pub region: RegionConfig,
    /// Depth levels to process, in metres.
    pub depths: Vec<f64>,
    pub structural: StructuralConfig,
    pub optimizer: OptimizerConfig,
    pub subspace: SubspaceConfig,
    pub change_points: ChangePointConfig,
    pub report: ReportConfig,
    pub output: OutputConfig,
    /// Worker threads for the per-series fits.
    pub workers: usize,
    /// Recorded with the outputs; the fits themselves are deterministic.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: InputConfig::default(),
            region: RegionConfig::default(),
            depths: vec![10.0, 50.0, 100.0, 150.0, 200.0],
            structural: StructuralConfig::default(),
            optimizer: OptimizerConfig::default(),
            subspace: SubspaceConfig::default(),
            change_points: ChangePointConfig::default(),
            report: ReportConfig::default(),
            output: OutputConfig::default(),
            workers: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    /// `csv` or `jsonl`.
    pub format: String,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("grid.csv"),
            format: "csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub box_size: f64,
    pub min_coverage: f64,
    pub max_missing_fraction: f64,
    pub cos_lat_weights: bool,
}

impl Default for RegionConfig {
    fn default() -> Self {
        let r = Region::NORTH_PACIFIC;
        let b = BoxOptions::default();
        Self {
            lat_min: r.lat_min,
            lat_max: r.lat_max,
            lon_min: r.lon_min,
            lon_max: r.lon_max,
            box_size: b.box_size,
            min_coverage: b.min_coverage,
            max_missing_fraction: b.max_missing_fraction,
            cos_lat_weights: b.cos_lat_weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructuralConfig {
    pub trend_order: usize,
    pub season_length: usize,
    pub seasonal: bool,
    pub cycle: bool,
    /// Hold ρ and λc at these values instead of estimating them; set both
    /// or neither.
    pub fixed_rho: Option<f64>,
    pub fixed_lambda: Option<f64>,
    pub rho_bounds: [f64; 2],
    pub lambda_bounds: [f64; 2],
}

impl Default for StructuralConfig {
    fn default() -> Self {
        let s = StructuralSpec::default();
        Self {
            trend_order: s.trend_order,
            season_length: s.season_length,
            seasonal: s.seasonal,
            cycle: s.cycle,
            fixed_rho: None,
            fixed_lambda: None,
            rho_bounds: [s.rho_bounds.0, s.rho_bounds.1],
            lambda_bounds: [s.lambda_bounds.0, s.lambda_bounds.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub diameter_tol: f64,
    pub max_evals: usize,
    pub initial_step: f64,
    pub start_ratios: Vec<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let f = FitOptions::default();
        Self {
            diameter_tol: f.simplex.diameter_tol,
            max_evals: f.simplex.max_evals,
            initial_step: f.simplex.initial_step,
            start_ratios: f.start_ratios,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceConfig {
    pub past: usize,
    pub future: usize,
    pub demean: bool,
    /// Fixed number of common trends; ignored when `energy` is set.
    pub rank: usize,
    /// Choose the rank by cumulative singular-value share instead.
    pub energy: Option<f64>,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        let h = HankelSpec::default();
        Self {
            past: h.past,
            future: h.future,
            demean: true,
            rank: 4,
            energy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChangePointConfig {
    pub min_persist: usize,
    pub slope_window: usize,
    pub inflection_factor: f64,
}

impl Default for ChangePointConfig {
    fn default() -> Self {
        let c = ChangePointOptions::default();
        Self {
            min_persist: c.min_persist,
            slope_window: c.slope_window,
            inflection_factor: c.inflection_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Boxes that get reconstruction files; empty means every box.
    pub locations: Vec<String>,
    /// `[shallow, deep]` depth pairs for stratification.
    pub stratification: Vec<[f64; 2]>,
    /// Trends summed in the stratification reconstructions.
    pub stratification_trends: Vec<usize>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            locations: Vec::new(),
            stratification: vec![[10.0, 150.0]],
            stratification_trends: vec![1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// `csv` or `jsonl` for every record product.
    pub format: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: "csv".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Checks every field and converts what the library can check itself.
    pub fn validate(&self) -> Result<()> {
        self.input_format()?;
        self.output_format()?;
        ensure!(!self.depths.is_empty(), "config error: depth list is empty");
        ensure!(
            self.depths.iter().all(|d| d.is_finite() && *d >= 0.0),
            "config error: depths must be finite and non-negative"
        );
        let mut sorted = self.depths.clone();
        sorted.sort_by(f64::total_cmp);
        ensure!(
            sorted.windows(2).all(|w| w[0] != w[1]),
            "config error: duplicate depth"
        );
        ensure!(self.workers >= 1, "config error: workers must be at least 1");
        self.region().boxes(self.region.box_size)?;
        self.box_options().validate()?;
        self.structural_spec()?.validate()?;
        let o = &self.optimizer;
        ensure!(
            o.diameter_tol > 0.0 && o.initial_step > 0.0 && o.max_evals > 0,
            "config error: optimizer tolerances and budget must be positive"
        );
        ensure!(
            !o.start_ratios.is_empty() && o.start_ratios.iter().all(|r| *r > 0.0),
            "config error: start_ratios must be a non-empty list of positive numbers"
        );
        let s = &self.subspace;
        ensure!(s.past >= 1 && s.future >= 1, "config error: past and future must be ≥ 1");
        match s.energy {
            Some(e) => ensure!(e > 0.0 && e <= 1.0, "config error: energy must lie in (0, 1]"),
            None => ensure!(s.rank >= 1, "config error: rank must be at least 1"),
        }
        let c = &self.change_points;
        ensure!(
            c.min_persist >= 1 && c.slope_window >= 2 && c.inflection_factor > 1.0,
            "config error: change-point settings need min_persist ≥ 1, slope_window ≥ 2, inflection_factor > 1"
        );
        for pair in &self.report.stratification {
            for d in pair {
                ensure!(
                    self.depths.contains(d),
                    "config error: stratification depth {d} is not in the depth list"
                );
            }
        }
        ensure!(
            self.report.stratification_trends.iter().all(|&j| j >= 1),
            "config error: stratification trends are 1-based"
        );
        Ok(())
    }

    pub fn input_format(&self) -> Result<Format> {
        Ok(self.input.format.parse()?)
    }

    pub fn output_format(&self) -> Result<Format> {
        Ok(self.output.format.parse()?)
    }

    pub fn region(&self) -> Region {
        let r = &self.region;
        Region {
            lat_min: r.lat_min,
            lat_max: r.lat_max,
            lon_min: r.lon_min,
            lon_max: r.lon_max,
        }
    }

    pub fn box_options(&self) -> BoxOptions {
        BoxOptions {
            box_size: self.region.box_size,
            min_coverage: self.region.min_coverage,
            cos_lat_weights: self.region.cos_lat_weights,
            max_missing_fraction: self.region.max_missing_fraction,
        }
    }

    pub fn structural_spec(&self) -> Result<StructuralSpec> {
        let s = &self.structural;
        let cycle_mode = match (s.fixed_rho, s.fixed_lambda) {
            (None, None) => CycleMode::Estimate,
            (Some(rho), Some(lambda)) => CycleMode::Fixed { rho, lambda },
            _ => bail!("config error: set both fixed_rho and fixed_lambda, or neither"),
        };
        Ok(StructuralSpec {
            trend_order: s.trend_order,
            season_length: s.season_length,
            seasonal: s.seasonal,
            cycle: s.cycle,
            cycle_mode,
            rho_bounds: (s.rho_bounds[0], s.rho_bounds[1]),
            lambda_bounds: (s.lambda_bounds[0], s.lambda_bounds[1]),
        })
    }

    pub fn fit_options(&self) -> FitOptions {
        let o = &self.optimizer;
        FitOptions {
            simplex: NelderMeadOptions {
                diameter_tol: o.diameter_tol,
                max_evals: o.max_evals,
                initial_step: o.initial_step,
            },
            start_ratios: o.start_ratios.clone(),
        }
    }

    pub fn hankel_spec(&self) -> HankelSpec {
        HankelSpec {
            past: self.subspace.past,
            future: self.subspace.future,
            demean: self.subspace.demean,
        }
    }

    pub fn rank_policy(&self) -> RankPolicy {
        match self.subspace.energy {
            Some(e) => RankPolicy::Energy(e),
            None => RankPolicy::Fixed(self.subspace.rank),
        }
    }

    pub fn change_point_options(&self) -> ChangePointOptions {
        let c = &self.change_points;
        ChangePointOptions {
            min_persist: c.min_persist,
            slope_window: c.slope_window,
            inflection_factor: c.inflection_factor,
        }
    }
}

/// Directory name for a depth level: `10m`, `7.5m`.
pub fn depth_dir(depth: f64) -> String {
    format!("{depth}m")
}
