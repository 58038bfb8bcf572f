//! The three pipeline stages. Each stage writes under `out/<depth>m/` or
//! `out/reports/` and returns the per-series failures it recorded.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use commontrends::analysis::{detect_change_points, relative_scale, stratification};
use commontrends::grid::{
    box_average, write_change_points, write_map, write_panel, write_series, ChangePointRow,
    DecompositionTable, Format, GriddedDataset, IngestOptions, StatesTable,
};
use commontrends::structural::fit;
use commontrends::subspace::{
    build_hankel, correlation_map, extract_trends, identify, loading_map, reconstruct,
    reconstruct_raw, CommonTrendsResult, RealizationModel, SeriesPanel,
};
use commontrends::ObservationSeries;

use crate::config::{depth_dir, RunConfig};

/// A series (or a whole depth) that a stage could not process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub depth_m: f64,
    /// Box id, `trend<j>`, or `*` for the whole depth.
    pub series_id: String,
    pub stage: String,
    pub message: String,
}

pub struct Run<'a> {
    pub cfg: &'a RunConfig,
    pub out: PathBuf,
    pub format: Format,
    pool: rayon::ThreadPool,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .context("starting worker pool")?;
        let out = cfg.output.dir.clone();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("config.effective.toml"), cfg.to_toml()?)?;
        Ok(Self {
            cfg,
            out,
            format: cfg.output_format()?,
            pool,
        })
    }

    fn file(&self, parts: &[&str], stem: &str) -> PathBuf {
        let mut p = self.out.clone();
        for part in parts {
            p.push(part);
        }
        p.push(format!("{stem}.{}", self.format.extension()));
        p
    }

    pub fn ingest(&self) -> Result<GriddedDataset> {
        let opts = IngestOptions {
            depths: Some(self.cfg.depths.clone()),
        };
        let ds = GriddedDataset::ingest(&self.cfg.input.path, self.cfg.input_format()?, &opts)?;
        for &d in &self.cfg.depths {
            ds.depth_index(d)?;
        }
        Ok(ds)
    }

    /// Writes the run manifest and returns the failures.
    pub fn finish(&self, command: &str, failures: Vec<Failure>) -> Result<Vec<Failure>> {
        let manifest = json!({
            "command": command,
            "depths": self.cfg.depths,
            "failures": failures,
        });
        fs::write(
            self.out.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(failures)
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> commontrends::Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, &buf).with_context(|| format!("writing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&buf)))
}

/// One entry of `decomp/manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub series_id: String,
    pub ok: bool,
    pub converged: bool,
    pub evals: usize,
    pub loglik: Option<f64>,
    pub params: Option<serde_json::Value>,
    pub error: Option<String>,
    /// Hash of the series values and the model and optimizer settings.
    pub input_hash: String,
    /// Hash of the decomposition file as written.
    pub output_hash: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct DecompManifest {
    depth_m: f64,
    fits: Vec<FitRecord>,
    non_converged: Vec<String>,
    failed: Vec<String>,
    #[serde(default)]
    reused: usize,
}

/// Box panel and per-box decompositions (`None` for failed fits).
pub struct DepthDecomposition {
    pub panel: SeriesPanel,
    pub tables: Vec<Option<DecompositionTable>>,
    pub failures: Vec<Failure>,
}

fn input_hash(cfg: &RunConfig, id: &str, obs: &ObservationSeries) -> Result<String> {
    let mut h = Sha256::new();
    let settings = serde_json::to_string(&(&cfg.structural, &cfg.optimizer))?;
    h.update(settings.as_bytes());
    h.update(id.as_bytes());
    h.update(obs.origin().to_string().as_bytes());
    for v in obs.values() {
        // all missing values hash alike
        let bits = if v.is_nan() { u64::MAX } else { v.to_bits() };
        h.update(bits.to_le_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

impl Run<'_> {
    /// Box-averages one depth and fits every box, reusing decompositions
    /// whose inputs and files are unchanged since the last run.
    pub fn decompose_depth(&self, ds: &GriddedDataset, depth: f64) -> Result<DepthDecomposition> {
        let cfg = self.cfg;
        let dir = depth_dir(depth);
        let panel = box_average(ds, depth, &cfg.region(), &cfg.box_options())?;
        write_file(&self.file(&[&dir], "panel"), |w| write_panel(&panel, &mut *w, self.format))?;

        let manifest_path = self.out.join(&dir).join("decomp").join("manifest.json");
        let previous: Option<DecompManifest> = fs::read_to_string(&manifest_path)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok());
        let spec = cfg.structural_spec()?;
        let fit_opts = cfg.fit_options();
        let season = cfg.structural.season_length;

        struct Job {
            id: String,
            obs: ObservationSeries,
            hash: String,
            cached: Option<(FitRecord, DecompositionTable)>,
        }
        let mut jobs = Vec::new();
        for (j, id) in panel.ids().iter().enumerate() {
            let values: Vec<f64> = panel.data().column(j).iter().copied().collect();
            let obs = ObservationSeries::with_origin(values, panel.origin(), season)?;
            let hash = input_hash(cfg, id, &obs)?;
            let cached = previous
                .as_ref()
                .and_then(|m| m.fits.iter().find(|r| r.series_id == *id))
                .filter(|r| r.ok && r.input_hash == hash)
                .and_then(|r| {
                    let path = self.file(&[&dir, "decomp"], id);
                    let bytes = fs::read(&path).ok()?;
                    if Some(hex::encode(Sha256::digest(&bytes))) != r.output_hash {
                        return None;
                    }
                    let t = DecompositionTable::read(&bytes[..], self.format, &path.display().to_string()).ok()?;
                    Some((r.clone(), t))
                });
            jobs.push(Job { id: id.clone(), obs, hash, cached });
        }

        let fitted: Vec<_> = self.pool.install(|| {
            jobs.par_iter()
                .map(|job| match &job.cached {
                    Some(_) => None,
                    None => Some(fit(&job.obs, &spec, &fit_opts)),
                })
                .collect()
        });

        let mut records = Vec::with_capacity(jobs.len());
        let mut tables = Vec::with_capacity(jobs.len());
        let mut failures = Vec::new();
        let mut reused = 0;
        for (job, result) in jobs.into_iter().zip(fitted) {
            let path = self.file(&[&dir, "decomp"], &job.id);
            if let Some((record, table)) = job.cached {
                reused += 1;
                records.push(record);
                tables.push(Some(table));
                continue;
            }
            match result.expect("fitted when not cached") {
                Ok(d) => {
                    let table = DecompositionTable::new(&job.id, depth, &job.obs, &d)?;
                    let out_hash = write_file(&path, |w| table.write(&mut *w, self.format))?;
                    let p = &d.params;
                    records.push(FitRecord {
                        series_id: job.id,
                        ok: true,
                        converged: d.converged,
                        evals: d.evals,
                        loglik: Some(d.loglik),
                        params: Some(json!({
                            "obs_var": p.obs_var,
                            "trend_var": p.trend_var,
                            "seasonal_var": p.seasonal_var,
                            "cycle_var": p.cycle_var,
                            "rho": p.rho,
                            "lambda": p.lambda,
                        })),
                        error: None,
                        input_hash: job.hash,
                        output_hash: Some(out_hash),
                    });
                    tables.push(Some(table));
                }
                Err(e) => {
                    let _ = fs::remove_file(&path);
                    failures.push(Failure {
                        depth_m: depth,
                        series_id: job.id.clone(),
                        stage: "decompose".into(),
                        message: e.to_string(),
                    });
                    records.push(FitRecord {
                        series_id: job.id,
                        ok: false,
                        converged: false,
                        evals: 0,
                        loglik: None,
                        params: None,
                        error: Some(e.to_string()),
                        input_hash: job.hash,
                        output_hash: None,
                    });
                    tables.push(None);
                }
            }
        }
        let manifest = DecompManifest {
            depth_m: depth,
            non_converged: records
                .iter()
                .filter(|r| r.ok && !r.converged)
                .map(|r| r.series_id.clone())
                .collect(),
            failed: records.iter().filter(|r| !r.ok).map(|r| r.series_id.clone()).collect(),
            fits: records,
            reused,
        };
        // `reused` differs between a fresh run and a rerun, so it is kept
        // out of the manifest bytes
        let mut value = serde_json::to_value(&manifest)?;
        value.as_object_mut().expect("object").remove("reused");
        fs::create_dir_all(manifest_path.parent().expect("has parent"))?;
        fs::write(&manifest_path, serde_json::to_string_pretty(&value)? + "\n")?;
        Ok(DepthDecomposition {
            panel,
            tables,
            failures,
        })
    }

    pub fn decompose(&self) -> Result<Vec<Failure>> {
        let ds = self.ingest()?;
        let mut failures = Vec::new();
        for &depth in &self.cfg.depths {
            failures.extend(self.decompose_depth(&ds, depth)?.failures);
        }
        self.finish("decompose", failures)
    }
}

/// Subsets `{1}, {1,2}, …` up to `n` trends (at most four).
fn cumulative_subsets(n: usize) -> Vec<Vec<usize>> {
    (1..=n.min(4)).map(|k| (1..=k).collect()).collect()
}

fn subset_name(s: &[usize]) -> String {
    let parts: Vec<String> = s.iter().map(|j| j.to_string()).collect();
    format!("trends_{}", parts.join("_"))
}

fn matrix_json(m: &DMatrix<f64>) -> serde_json::Value {
    json!((0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn model_json(depth: f64, model: &RealizationModel, result: &CommonTrendsResult) -> serde_json::Value {
    json!({
        "depth_m": depth,
        "n_trends": model.n,
        "series_ids": result.ids,
        "origin": result.origin.to_string(),
        "singular_values": model.singular_values,
        "spectral_radius": model.spectral_radius(),
        "a": matrix_json(&model.a),
        "c": matrix_json(&model.c),
        "k": matrix_json(&model.k),
        "offsets": result.offsets,
        "events": model.events,
    })
}

impl Run<'_> {
    /// Partial residuals of the successful fits at one depth, identified
    /// and written out.
    fn common_trends_depth(&self, ds: &GriddedDataset, depth: f64) -> Result<(Vec<Failure>, Option<CommonTrendsResult>)> {
        let dd = self.decompose_depth(ds, depth)?;
        let mut failures = dd.failures;
        let dir = depth_dir(depth);
        let ok: Vec<(&String, &DecompositionTable)> = dd
            .panel
            .ids()
            .iter()
            .zip(&dd.tables)
            .filter_map(|(id, t)| t.as_ref().map(|t| (id, t)))
            .collect();
        let attempt = || -> commontrends::Result<(SeriesPanel, RealizationModel, CommonTrendsResult)> {
            if ok.is_empty() {
                return Err(commontrends::Error::Data("no successful fits".into()));
            }
            let tau = dd.panel.len();
            let residuals = ok
                .iter()
                .map(|(_, t)| t.filled_partial_residual())
                .collect::<commontrends::Result<Vec<_>>>()?;
            let data = DMatrix::from_fn(tau, ok.len(), |t, j| residuals[j][t]);
            let trends = DMatrix::from_fn(tau, ok.len(), |t, j| ok[j].1.trend[t]);
            let ids = ok.iter().map(|(id, _)| (*id).clone()).collect();
            let panel = SeriesPanel::new(ids, depth, dd.panel.origin(), data)?.with_trends(trends)?;
            let hankel = build_hankel(&panel, &self.cfg.hankel_spec())?;
            let model = identify(&hankel, self.cfg.rank_policy())?;
            let result = extract_trends(&model, &panel)?;
            Ok((panel, model, result))
        };
        let (panel, model, result) = match attempt() {
            Ok(v) => v,
            Err(e) => {
                failures.push(Failure {
                    depth_m: depth,
                    series_id: "*".into(),
                    stage: "common-trends".into(),
                    message: e.to_string(),
                });
                return Ok((failures, None));
            }
        };

        write_file(&self.file(&[&dir, "trends"], "states"), |w| {
            StatesTable::from_result(&result).write(&mut *w, self.format)
        })?;
        fs::write(
            self.out.join(&dir).join("trends").join("model.json"),
            serde_json::to_string_pretty(&model_json(depth, &model, &result))? + "\n",
        )?;
        let corr = correlation_map(&panel, &result, 1)?;
        write_file(&self.file(&[&dir, "maps"], "trend1"), |w| {
            write_map(&corr, "correlation", &mut *w, self.format)
        })?;
        for j in 2..=result.n_trends() {
            let map: Vec<(String, Option<f64>)> = loading_map(&result, j)?
                .into_iter()
                .map(|(id, v)| (id, Some(v)))
                .collect();
            write_file(&self.file(&[&dir, "maps"], &format!("trend{j}")), |w| {
                write_map(&map, "loading", &mut *w, self.format)
            })?;
        }
        let subsets = cumulative_subsets(result.n_trends());
        let names: Vec<String> = subsets.iter().map(|s| subset_name(s)).collect();
        for id in &result.ids {
            if !self.cfg.report.locations.is_empty() && !self.cfg.report.locations.contains(id) {
                continue;
            }
            let recon = subsets
                .iter()
                .map(|s| reconstruct(&result, id, s))
                .collect::<commontrends::Result<Vec<_>>>()?;
            let cols: Vec<(&str, &ObservationSeries)> =
                names.iter().map(String::as_str).zip(recon.iter()).collect();
            write_file(&self.file(&[&dir, "recon"], id), |w| write_series(&cols, &mut *w, self.format))?;
        }
        Ok((failures, Some(result)))
    }

    pub fn common_trends(&self) -> Result<Vec<Failure>> {
        let ds = self.ingest()?;
        let mut failures = Vec::new();
        for &depth in &self.cfg.depths {
            failures.extend(self.common_trends_depth(&ds, depth)?.0);
        }
        self.finish("common-trends", failures)
    }

    /// Reads a depth's common-trend result back from its files.
    fn load_result(&self, depth: f64) -> Result<CommonTrendsResult> {
        let dir = self.out.join(depth_dir(depth)).join("trends");
        let model: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.join("model.json"))
                .with_context(|| format!("no common-trend output for {depth} m; run common-trends first"))?,
        )?;
        let n = model["n_trends"].as_u64().context("model.json lacks n_trends")? as usize;
        let ids: Vec<String> = serde_json::from_value(model["series_ids"].clone())?;
        let c: Vec<Vec<f64>> = serde_json::from_value(model["c"].clone())?;
        let offsets: Vec<f64> = serde_json::from_value(model["offsets"].clone())?;
        let states_path = self.file(&[&depth_dir(depth), "trends"], "states");
        let table = StatesTable::read(
            fs::File::open(&states_path).with_context(|| format!("opening {}", states_path.display()))?,
            self.format,
            &states_path.display().to_string(),
            n,
        )?;
        Ok(CommonTrendsResult {
            ids,
            origin: table.origin,
            states: table.states,
            trends: table.trends,
            loadings: DMatrix::from_fn(c.len(), n, |i, j| c[i][j]),
            offsets,
        })
    }

    pub fn report(&self) -> Result<Vec<Failure>> {
        let opts = self.cfg.change_point_options();
        let mut failures = Vec::new();
        let mut rows = Vec::new();
        let mut results = Vec::new();
        for &depth in &self.cfg.depths {
            let result = self.load_result(depth)?;
            let dir = depth_dir(depth);
            for id in &result.ids {
                let path = self.file(&[&dir, "decomp"], id);
                let table = DecompositionTable::read(
                    fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?,
                    self.format,
                    &path.display().to_string(),
                )?;
                let trend = ObservationSeries::with_origin(table.trend.clone(), table.observed.origin(), 12)?;
                match detect_change_points(&trend, &opts) {
                    Ok(cps) => rows.extend(cps.iter().map(|c| ChangePointRow::new(id, depth, c))),
                    Err(e) => failures.push(Failure {
                        depth_m: depth,
                        series_id: id.clone(),
                        stage: "report".into(),
                        message: e.to_string(),
                    }),
                }
            }
            let mut relative = Vec::new();
            for j in 1..=result.n_trends() {
                let trend = ObservationSeries::with_origin(result.trend(j)?, result.origin, 12)?;
                let name = format!("trend{j}");
                match detect_change_points(&trend, &opts) {
                    Ok(cps) => rows.extend(cps.iter().map(|c| ChangePointRow::new(&name, depth, c))),
                    Err(e) => failures.push(Failure {
                        depth_m: depth,
                        series_id: name.clone(),
                        stage: "report".into(),
                        message: e.to_string(),
                    }),
                }
                relative.push((name, relative_scale(&trend)?));
            }
            let cols: Vec<(&str, &ObservationSeries)> =
                relative.iter().map(|(n, s)| (n.as_str(), s)).collect();
            write_file(&self.file(&["reports"], &format!("trends_{dir}")), |w| {
                write_series(&cols, &mut *w, self.format)
            })?;
            results.push((depth, result));
        }
        write_file(&self.file(&["reports"], "change_points"), |w| {
            write_change_points(&rows, &mut *w, self.format)
        })?;

        for [shallow, deep] in &self.cfg.report.stratification {
            let find = |d: f64| results.iter().find(|(x, _)| *x == d).map(|(_, r)| r);
            let (Some(top), Some(bottom)) = (find(*shallow), find(*deep)) else {
                continue;
            };
            let subset = |r: &CommonTrendsResult| -> Vec<usize> {
                self.cfg
                    .report
                    .stratification_trends
                    .iter()
                    .copied()
                    .filter(|&j| j <= r.n_trends())
                    .collect()
            };
            let mut cols = Vec::new();
            for id in top.ids.iter().filter(|id| bottom.ids.contains(id)) {
                let a = reconstruct_raw(top, id, &subset(top))?;
                let b = reconstruct_raw(bottom, id, &subset(bottom))?;
                match stratification(&a, &b) {
                    Ok(s) => cols.push((id.clone(), s)),
                    Err(e) => failures.push(Failure {
                        depth_m: *shallow,
                        series_id: id.clone(),
                        stage: "stratification".into(),
                        message: e.to_string(),
                    }),
                }
            }
            if cols.is_empty() {
                continue;
            }
            let refs: Vec<(&str, &ObservationSeries)> = cols.iter().map(|(n, s)| (n.as_str(), s)).collect();
            let stem = format!("stratification_{}_{}", depth_dir(*shallow), depth_dir(*deep));
            write_file(&self.file(&["reports"], &stem), |w| write_series(&refs, &mut *w, self.format))?;
        }
        self.finish("report", failures)
    }
}
