//! Planted grids for exercising the pipeline end to end.

use std::fs;
use std::path::PathBuf;

use anyhow::{ensure, Context, Result};

use commontrends::grid::{write_records, Field, Format, GriddedDataset, Region};
use commontrends::synth::{planted_panel, PlantedConfig};
use commontrends::YearMonth;

use crate::config::{depth_dir, RunConfig};

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub dir: PathBuf,
    pub seed: u64,
    pub depths: Vec<f64>,
    pub months: usize,
    pub start: YearMonth,
    /// Cell spacing in degrees; must divide the box size.
    pub resolution: f64,
    pub amplitudes: Vec<f64>,
    pub noise_sd: f64,
    pub seasonal_amplitude: f64,
    pub region: Region,
    pub box_size: f64,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("sim"),
            seed: 0,
            depths: vec![10.0, 50.0, 100.0, 150.0, 200.0],
            months: 564,
            start: YearMonth { year: 1958, month: 1 },
            resolution: 5.0,
            amplitudes: vec![4.0, 3.0, 2.0, 1.0],
            noise_sd: 0.3,
            seasonal_amplitude: 1.0,
            region: Region::NORTH_PACIFIC,
            box_size: 5.0,
        }
    }
}

/// Writes `grid.csv`, `truth/<depth>m/{factors,loadings}.csv` and a
/// `config.toml` that runs the pipeline on the grid. Every cell of a box
/// carries the box's planted series, so box means reproduce it exactly.
pub fn simulate(opts: &SimulateOptions) -> Result<()> {
    let per_box = opts.box_size / opts.resolution;
    ensure!(
        opts.resolution > 0.0 && (per_box - per_box.round()).abs() < 1e-9 && per_box >= 1.0,
        "resolution {} must divide the box size {}",
        opts.resolution,
        opts.box_size
    );
    ensure!(!opts.depths.is_empty(), "depth list is empty");
    let boxes = opts.region.boxes(opts.box_size)?;
    let n_lat = ((opts.region.lat_max - opts.region.lat_min) / opts.resolution).round() as usize;
    let n_lon = ((opts.region.lon_max - opts.region.lon_min) / opts.resolution).round() as usize;
    let lats: Vec<f64> = (0..n_lat).map(|i| opts.region.lat_min + opts.resolution * (i as f64 + 0.5)).collect();
    let lons: Vec<f64> = (0..n_lon).map(|j| opts.region.lon_min + opts.resolution * (j as f64 + 0.5)).collect();
    let boxes_per_row = ((opts.region.lon_max - opts.region.lon_min) / opts.box_size).round() as usize;
    let per_box = per_box.round() as usize;

    let mut panels = Vec::new();
    for (d, &depth) in opts.depths.iter().enumerate() {
        let cfg = PlantedConfig {
            n_series: boxes.len(),
            length: opts.months,
            amplitudes: opts.amplitudes.clone(),
            noise_sd: opts.noise_sd,
            seasonal_amplitude: opts.seasonal_amplitude,
            seed: opts.seed.wrapping_add(d as u64),
        };
        let planted = planted_panel(&cfg)?;
        // warmer near the surface
        let base = 20.0 - depth / 20.0;
        let truth = opts.dir.join("truth").join(depth_dir(depth));
        fs::create_dir_all(&truth)?;
        let r = opts.amplitudes.len();
        let mut names = vec!["index".to_string(), "year".into(), "month".into()];
        names.extend((1..=r).map(|j| format!("factor{j}")));
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let rows = (0..opts.months).map(|t| {
            let ym = opts.start.offset(t as i64);
            let mut row = vec![Field::Int(t as i64), Field::Int(ym.year as i64), Field::Int(ym.month as i64)];
            row.extend((0..r).map(|j| Field::Num(planted.factors[(t, j)])));
            row
        });
        write_records(fs::File::create(truth.join("factors.csv"))?, Format::Csv, &names, rows)?;
        let mut names = vec!["series_id".to_string()];
        names.extend((1..=r).map(|j| format!("loading{j}")));
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let rows = boxes.iter().enumerate().map(|(k, b)| {
            let mut row = vec![Field::Text(b.id())];
            row.extend((0..r).map(|j| Field::Num(opts.amplitudes[j] * planted.loadings[(k, j)])));
            row
        });
        write_records(fs::File::create(truth.join("loadings.csv"))?, Format::Csv, &names, rows)?;
        panels.push((base, planted.data));
    }

    let ds = GriddedDataset::from_fn(
        lats,
        lons,
        opts.depths.clone(),
        opts.start,
        opts.months,
        |d, t, i, j| {
            let k = (i / per_box) * boxes_per_row + j / per_box;
            panels[d].0 + panels[d].1[(t, k)]
        },
    )?;
    let grid = opts.dir.join("grid.csv");
    ds.write_path(&grid, Format::Csv)?;

    let mut cfg = RunConfig::default();
    cfg.input.path = grid;
    cfg.depths = opts.depths.clone();
    cfg.region.lat_min = opts.region.lat_min;
    cfg.region.lat_max = opts.region.lat_max;
    cfg.region.lon_min = opts.region.lon_min;
    cfg.region.lon_max = opts.region.lon_max;
    cfg.region.box_size = opts.box_size;
    cfg.subspace.rank = opts.amplitudes.len();
    cfg.seed = opts.seed;
    cfg.output.dir = opts.dir.join("out");
    let keep: Vec<[f64; 2]> = cfg
        .report
        .stratification
        .iter()
        .copied()
        .filter(|p| p.iter().all(|d| opts.depths.contains(d)))
        .collect();
    cfg.report.stratification = keep;
    fs::write(opts.dir.join("config.toml"), cfg.to_toml()?)
        .with_context(|| format!("writing config in {}", opts.dir.display()))?;
    Ok(())
}
