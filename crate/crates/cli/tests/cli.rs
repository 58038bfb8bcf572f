use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use commontrends::grid::{Format, GriddedDataset, StatesTable};
use commontrends::YearMonth;
use commontrends_cli::config::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_commontrends"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

/// Simulates a small planted grid and returns its config, with the cycle
/// switched off to keep the fits quick.
fn toy(dir: &Path, region: &str, months: &str, amplitudes: &str) -> RunConfig {
    let d = dir.to_str().unwrap();
    let out = run(&[
        "simulate", "-o", d, "--depths", "10", "--months", months, "--region", region,
        "--amplitudes", amplitudes, "--seed", "7",
    ]);
    assert!(out.status.success());
    let mut cfg = RunConfig::load(&dir.join("config.toml")).unwrap();
    cfg.structural.cycle = false;
    cfg
}

fn save(cfg: &RunConfig, path: &Path) -> String {
    fs::write(path, cfg.to_toml().unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path, skip: &[&str]) {
    let (fa, fb) = (files(a), files(b));
    assert_eq!(fa, fb);
    for f in fa {
        if skip.iter().any(|s| f.ends_with(s)) {
            continue;
        }
        assert!(fs::read(a.join(&f)).unwrap() == fs::read(b.join(&f)).unwrap(), "{} differs", f.display());
    }
}

#[test]
fn two_box_toy_decomposes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(tmp.path(), "20,25,110,120", "96", "1");
    let path = save(&cfg, &tmp.path().join("run.toml"));
    assert!(run(&["decompose", "-c", &path]).status.success());
    let decomp = cfg.output.dir.join("10m").join("decomp");
    let mut names: Vec<String> = fs::read_dir(&decomp)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["20N_110E.csv", "20N_115E.csv", "manifest.json"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(decomp.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["fits"].as_array().unwrap().len(), 2);
    assert!(manifest["non_converged"].is_array());
    let effective = RunConfig::load(&cfg.output.dir.join("config.effective.toml")).unwrap();
    assert_eq!(effective, cfg);
}

#[test]
fn reruns_and_worker_counts_give_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = toy(tmp.path(), "20,30,110,125", "72", "2,1");
    cfg.subspace.rank = 2;
    let mut outs = Vec::new();
    for (name, workers) in [("a", 1), ("b", 1), ("c", 8)] {
        cfg.workers = workers;
        cfg.output.dir = tmp.path().join(name);
        let path = save(&cfg, &tmp.path().join(format!("{name}.toml")));
        for cmd in ["decompose", "common-trends", "report"] {
            assert!(run(&[cmd, "-c", &path]).status.success(), "{cmd}");
        }
        outs.push(cfg.output.dir.clone());
    }
    // the echoed configs name different output directories and worker counts
    assert_same_tree(&outs[0], &outs[1], &["config.effective.toml"]);
    assert_same_tree(&outs[0], &outs[2], &["config.effective.toml"]);
}

#[test]
fn common_trends_reuses_current_decompositions() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = toy(tmp.path(), "20,25,110,120", "72", "1");
    cfg.subspace.rank = 1;
    let path = save(&cfg, &tmp.path().join("run.toml"));
    assert!(run(&["decompose", "-c", &path]).status.success());
    let file = cfg.output.dir.join("10m/decomp/20N_110E.csv");
    let before = fs::metadata(&file).unwrap().modified().unwrap();
    std::thread::sleep(std::time::Duration::from_millis(20));
    assert!(run(&["common-trends", "-c", &path]).status.success());
    assert_eq!(fs::metadata(&file).unwrap().modified().unwrap(), before);

    // a changed setting invalidates the cache
    cfg.optimizer.diameter_tol = 1e-5;
    let path = save(&cfg, &tmp.path().join("run.toml"));
    assert!(run(&["common-trends", "-c", &path]).status.success());
    assert!(fs::metadata(&file).unwrap().modified().unwrap() > before);

    // so does a tampered output file
    let good = fs::read(&file).unwrap();
    fs::write(&file, b"series_id\n").unwrap();
    assert!(run(&["common-trends", "-c", &path]).status.success());
    assert_eq!(fs::read(&file).unwrap(), good);
}

#[test]
fn empty_depth_list_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.depths.clear();
    cfg.output.dir = tmp.path().join("out");
    let path = save(&cfg, &tmp.path().join("run.toml"));
    let out = run(&["common-trends", "-c", &path]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("depth list is empty"));
    assert!(!cfg.output.dir.exists());
}

#[test]
fn single_trend_request() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(tmp.path(), "20,30,110,120", "72", "2");
    let path = save(&cfg, &tmp.path().join("run.toml"));
    assert!(run(&["common-trends", "-c", &path, "--rank", "1"]).status.success());
    let depth = cfg.output.dir.join("10m");
    let maps: Vec<_> = fs::read_dir(depth.join("maps")).unwrap().collect();
    assert_eq!(maps.len(), 1);
    let states = StatesTable::read(
        fs::File::open(depth.join("trends/states.csv")).unwrap(),
        Format::Csv,
        "states",
        1,
    )
    .unwrap();
    assert_eq!(states.trends.ncols(), 1);
    let recon = fs::read_to_string(depth.join("recon/20N_110E.csv")).unwrap();
    assert_eq!(recon.lines().next().unwrap(), "index,year,month,trends_1");
}

#[test]
fn failed_fit_is_recorded_and_exit_code_is_2() {
    let tmp = tempfile::tempdir().unwrap();
    // box 20N_115E has a single observed month
    let ds = GriddedDataset::from_fn(
        vec![22.5],
        vec![112.5, 117.5],
        vec![10.0],
        YearMonth::new(1990, 1).unwrap(),
        48,
        |_, t, _, j| match j {
            0 => 10.0 + (t as f64 * 0.5).sin(),
            _ if t == 0 => 3.0,
            _ => f64::NAN,
        },
    )
    .unwrap();
    let grid = tmp.path().join("grid.jsonl");
    ds.write_path(&grid, Format::JsonLines).unwrap();
    let mut cfg = RunConfig::default();
    cfg.input.path = grid;
    cfg.input.format = "jsonl".into();
    cfg.depths = vec![10.0];
    cfg.region.lat_max = 25.0;
    cfg.region.lon_max = 120.0;
    cfg.region.max_missing_fraction = 1.0;
    cfg.report.stratification.clear();
    cfg.structural.cycle = false;
    cfg.output.dir = tmp.path().join("out");
    let path = save(&cfg, &tmp.path().join("run.toml"));
    let out = run(&["decompose", "-c", &path]);
    assert_eq!(out.status.code(), Some(2));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.output.dir.join("manifest.json")).unwrap()).unwrap();
    let failures = manifest["failures"].as_array().unwrap();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0]["series_id"], "20N_115E");
    assert!(cfg.output.dir.join("10m/decomp/20N_110E.csv").exists());
    assert!(!cfg.output.dir.join("10m/decomp/20N_115E.csv").exists());
}

#[test]
fn ingest_errors_abort_before_fitting() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = tmp.path().join("grid.csv");
    fs::write(&grid, "lat,lon,depth_m,year,month,value\n22.5,112.5,10,1990,1,1\n22.5,112.5,10,1990,3,1\n").unwrap();
    let out = run(&[
        "decompose", "--input", grid.to_str().unwrap(), "--depths", "10",
        "--output", tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1990-02"));
    assert!(!tmp.path().join("out/10m").exists());
}

#[test]
fn planted_factors_recovered_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = toy(tmp.path(), "20,40,110,140", "240", "3,1.5");
    cfg.structural.seasonal = true;
    let path = save(&cfg, &tmp.path().join("run.toml"));
    assert!(run(&["common-trends", "-c", &path]).status.success());
    let states = StatesTable::read(
        fs::File::open(cfg.output.dir.join("10m/trends/states.csv")).unwrap(),
        Format::Csv,
        "states",
        2,
    )
    .unwrap();
    let text = fs::read_to_string(tmp.path().join("truth/10m/factors.csv")).unwrap();
    let factors: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(3).map(|v| v.parse().unwrap()).collect())
        .collect();
    // trends are identified up to rotation, so each planted factor is
    // compared with its best linear combination of the estimated trends
    for f in 0..2 {
        let truth: Vec<f64> = factors.iter().map(|r| r[f]).collect();
        let r = multiple_corr(&truth, &states.trends);
        assert!(r >= 0.9, "factor {} multiple correlation {r}", f + 1);
    }
}

fn multiple_corr(y: &[f64], x: &nalgebra::DMatrix<f64>) -> f64 {
    let n = y.len();
    let mut design = nalgebra::DMatrix::from_element(n, x.ncols() + 1, 1.0);
    design.columns_mut(1, x.ncols()).copy_from(x);
    let y = nalgebra::DVector::from_column_slice(y);
    let beta = design.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    corr(y.as_slice(), (design * beta).as_slice())
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma) * (x - ma);
        bb += (y - mb) * (y - mb);
    }
    ab / (aa * bb).sqrt()
}
