//! Record layouts of the pipeline products. Every writer has a reader that
//! restores what it wrote exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::table::{for_each_record, write_records, Field, Format, Record};
use super::parse_box_id;
use crate::analysis::{ChangeKind, ChangePoint};
use crate::error::{Error, Result};
use crate::series::{ObservationSeries, YearMonth};
use crate::structural::DecompositionResult;
use crate::subspace::{CommonTrendsResult, SeriesPanel};

pub const PANEL_COLUMNS: [&str; 5] = ["box_id", "depth_m", "year", "month", "value"];

pub const CHANGE_POINT_COLUMNS: [&str; 8] = [
    "series_id",
    "depth_m",
    "index",
    "year",
    "month",
    "type",
    "slope_before",
    "slope_after",
];

pub const DECOMPOSITION_COLUMNS: [&str; 14] = [
    "series_id",
    "depth_m",
    "index",
    "year",
    "month",
    "value",
    "trend",
    "trend_var",
    "seasonal",
    "seasonal_var",
    "cycle",
    "cycle_var",
    "irregular",
    "irregular_var",
];

fn year_month(rec: &Record<'_>) -> Result<YearMonth> {
    let (y, m) = (rec.int("year")?, rec.int("month")?);
    i32::try_from(y)
        .ok()
        .zip(u32::try_from(m).ok())
        .and_then(|(y, m)| YearMonth::new(y, m).ok())
        .ok_or_else(|| rec.error(format!("invalid year/month {y}-{m}")))
}

fn ym_fields(ym: YearMonth) -> [Field; 2] {
    [Field::Int(ym.year as i64), Field::Int(ym.month as i64)]
}

/// Checks that rows arrive as `index = 0, 1, …` with matching months.
struct Steps {
    origin: Option<YearMonth>,
    next: usize,
}

impl Steps {
    fn new() -> Self {
        Self { origin: None, next: 0 }
    }

    fn push(&mut self, rec: &Record<'_>) -> Result<usize> {
        let ym = year_month(rec)?;
        let index = rec.int("index")?;
        if index != self.next as i64 {
            return Err(rec.error(format!("expected index {}, found {index}", self.next)));
        }
        let origin = *self.origin.get_or_insert(ym);
        if origin.offset(index) != ym {
            return Err(rec.error(format!(
                "month {ym} does not match index {index} from origin {origin}"
            )));
        }
        self.next += 1;
        Ok(index as usize)
    }

    fn finish(self, source: &str) -> Result<(YearMonth, usize)> {
        match self.origin {
            Some(o) => Ok((o, self.next)),
            None => Err(Error::data(format!("{source}: no records"))),
        }
    }
}

/// One row per series and month, series in panel order.
pub fn write_panel<W: Write>(panel: &SeriesPanel, writer: W, format: Format) -> Result<()> {
    write_panels(std::slice::from_ref(panel), writer, format)
}

pub fn write_panels<W: Write>(panels: &[SeriesPanel], writer: W, format: Format) -> Result<()> {
    let rows = panels.iter().flat_map(|p| {
        p.ids().iter().enumerate().flat_map(move |(j, id)| {
            (0..p.len()).map(move |t| {
                let [y, m] = ym_fields(p.origin().offset(t as i64));
                vec![
                    Field::Text(id.clone()),
                    Field::Num(p.depth_m()),
                    y,
                    m,
                    Field::num(p.data()[(t, j)]),
                ]
            })
        })
    });
    write_records(writer, format, &PANEL_COLUMNS, rows)
}

/// Reads panel records into one panel per depth, depths increasing, series
/// in order of first appearance. Every panel spans the full month range of
/// the file; absent rows become missing values.
pub fn read_panels<R: Read>(reader: R, format: Format, source: &str) -> Result<Vec<SeriesPanel>> {
    struct Depth {
        depth: f64,
        ids: Vec<String>,
        cells: BTreeMap<(usize, i64), (f64, u64)>,
    }
    let mut depths: BTreeMap<i64, Depth> = BTreeMap::new();
    let (mut first, mut last) = (i64::MAX, i64::MIN);
    for_each_record(reader, format, source, &PANEL_COLUMNS, |rec| {
        let id = rec.required_text("box_id")?;
        let depth = rec.required_num("depth_m")?;
        let ym = year_month(rec)?.ordinal();
        let value = rec.num("value")?.unwrap_or(f64::NAN);
        let entry = depths.entry(super::key(depth)).or_insert_with(|| Depth {
            depth,
            ids: Vec::new(),
            cells: BTreeMap::new(),
        });
        let j = match entry.ids.iter().position(|s| *s == id) {
            Some(j) => j,
            None => {
                entry.ids.push(id.clone());
                entry.ids.len() - 1
            }
        };
        if let Some((_, line)) = entry.cells.insert((j, ym), (value, rec.line)) {
            return Err(rec.error(format!(
                "duplicate record for {id} at {depth} m {} (first at line {line})",
                YearMonth::from_ordinal(ym)
            )));
        }
        first = first.min(ym);
        last = last.max(ym);
        Ok(())
    })?;
    if depths.is_empty() {
        return Err(Error::data(format!("{source}: no records")));
    }
    let tau = (last - first + 1) as usize;
    for t in first..=last {
        if !depths.values().any(|d| d.cells.keys().any(|&(_, m)| m == t)) {
            return Err(Error::data(format!(
                "{source}: time axis has a gap, no records for {}",
                YearMonth::from_ordinal(t)
            )));
        }
    }
    depths
        .into_values()
        .map(|d| {
            let mut data = DMatrix::from_element(tau, d.ids.len(), f64::NAN);
            for ((j, m), (v, _)) in d.cells {
                data[((m - first) as usize, j)] = v;
            }
            SeriesPanel::new(d.ids, d.depth, YearMonth::from_ordinal(first), data)
        })
        .collect()
}

/// A decomposition as written to disk: the observed series and the smoothed
/// components with their variances.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTable {
    pub series_id: String,
    pub depth_m: f64,
    pub observed: ObservationSeries,
    pub trend: Vec<f64>,
    pub trend_var: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub seasonal_var: Vec<f64>,
    pub cycle: Vec<f64>,
    pub cycle_var: Vec<f64>,
    pub irregular: Vec<f64>,
    pub irregular_var: Vec<f64>,
}

impl DecompositionTable {
    pub fn new(
        series_id: &str,
        depth_m: f64,
        observed: &ObservationSeries,
        d: &DecompositionResult,
    ) -> Result<Self> {
        if observed.len() != d.len() || observed.origin() != d.origin {
            return Err(Error::contract(
                "observed series does not match the decomposition",
            ));
        }
        Ok(Self {
            series_id: series_id.to_string(),
            depth_m,
            observed: observed.clone(),
            trend: d.trend.clone(),
            trend_var: d.trend_var.clone(),
            seasonal: d.seasonal.clone(),
            seasonal_var: d.seasonal_var.clone(),
            cycle: d.cycle.clone(),
            cycle_var: d.cycle_var.clone(),
            irregular: d.irregular.clone(),
            irregular_var: d.irregular_var.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.trend.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trend.is_empty()
    }

    /// Trend plus observation error, missing where the data is.
    pub fn partial_residual(&self) -> Result<ObservationSeries> {
        self.observed
            .map_values(|t, y| y - self.seasonal[t] - self.cycle[t])
    }

    /// [`Self::partial_residual`] with missing steps filled by the trend.
    pub fn filled_partial_residual(&self) -> Result<Vec<f64>> {
        let pr = self.partial_residual()?;
        Ok((0..self.len())
            .map(|t| pr.get(t).unwrap_or(self.trend[t]))
            .collect())
    }

    fn columns(&self) -> [&[f64]; 8] {
        [
            &self.trend,
            &self.trend_var,
            &self.seasonal,
            &self.seasonal_var,
            &self.cycle,
            &self.cycle_var,
            &self.irregular,
            &self.irregular_var,
        ]
    }

    pub fn write<W: Write>(&self, writer: W, format: Format) -> Result<()> {
        let cols = self.columns();
        let rows = (0..self.len()).map(|t| {
            let [y, m] = ym_fields(self.observed.month_at(t));
            let mut row = vec![
                Field::Text(self.series_id.clone()),
                Field::Num(self.depth_m),
                Field::Int(t as i64),
                y,
                m,
                Field::num(self.observed.values()[t]),
            ];
            row.extend(cols.iter().map(|c| Field::Num(c[t])));
            row
        });
        write_records(writer, format, &DECOMPOSITION_COLUMNS, rows)
    }

    pub fn read<R: Read>(reader: R, format: Format, source: &str) -> Result<Self> {
        let mut steps = Steps::new();
        let mut head: Option<(String, f64)> = None;
        let mut values = Vec::new();
        let mut cols: [Vec<f64>; 8] = Default::default();
        for_each_record(reader, format, source, &DECOMPOSITION_COLUMNS, |rec| {
            steps.push(rec)?;
            let id = rec.required_text("series_id")?;
            let depth = rec.required_num("depth_m")?;
            let (hid, hdepth) = head.get_or_insert_with(|| (id.clone(), depth));
            if *hid != id || *hdepth != depth {
                return Err(rec.error("a decomposition file holds exactly one series"));
            }
            values.push(rec.num("value")?.unwrap_or(f64::NAN));
            for (c, name) in cols.iter_mut().zip(&DECOMPOSITION_COLUMNS[6..]) {
                c.push(rec.required_num(name)?);
            }
            Ok(())
        })?;
        let (origin, _) = steps.finish(source)?;
        let (series_id, depth_m) = head.expect("records were read");
        let observed = ObservationSeries::with_origin(values, origin, 12)?;
        let [trend, trend_var, seasonal, seasonal_var, cycle, cycle_var, irregular, irregular_var] =
            cols;
        Ok(Self {
            series_id,
            depth_m,
            observed,
            trend,
            trend_var,
            seasonal,
            seasonal_var,
            cycle,
            cycle_var,
            irregular,
            irregular_var,
        })
    }
}

/// Common-trend trajectories: the predicted states `state<j>` and the
/// updated trends `trend<j>` per month.
#[derive(Debug, Clone, PartialEq)]
pub struct StatesTable {
    pub origin: YearMonth,
    pub states: DMatrix<f64>,
    pub trends: DMatrix<f64>,
}

impl StatesTable {
    pub fn from_result(r: &CommonTrendsResult) -> Self {
        Self {
            origin: r.origin,
            states: r.states.clone(),
            trends: r.trends.clone(),
        }
    }

    fn column_names(n: usize) -> Vec<String> {
        let mut cols: Vec<String> = ["index", "year", "month"].map(String::from).to_vec();
        cols.extend((1..=n).map(|j| format!("state{j}")));
        cols.extend((1..=n).map(|j| format!("trend{j}")));
        cols
    }

    pub fn write<W: Write>(&self, writer: W, format: Format) -> Result<()> {
        let n = self.states.ncols();
        let names = Self::column_names(n);
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let rows = (0..self.states.nrows()).map(|t| {
            let [y, m] = ym_fields(self.origin.offset(t as i64));
            let mut row = vec![Field::Int(t as i64), y, m];
            row.extend(self.states.row(t).iter().map(|&v| Field::Num(v)));
            row.extend(self.trends.row(t).iter().map(|&v| Field::Num(v)));
            row
        });
        write_records(writer, format, &names, rows)
    }

    /// Reads a table with `n` trends.
    pub fn read<R: Read>(reader: R, format: Format, source: &str, n: usize) -> Result<Self> {
        let names = Self::column_names(n);
        let required: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut steps = Steps::new();
        let mut flat = Vec::new();
        for_each_record(reader, format, source, &required, |rec| {
            steps.push(rec)?;
            for name in &required[3..] {
                flat.push(rec.required_num(name)?);
            }
            Ok(())
        })?;
        let (origin, tau) = steps.finish(source)?;
        let both = DMatrix::from_row_slice(tau, 2 * n, &flat);
        Ok(Self {
            origin,
            states: both.columns(0, n).into_owned(),
            trends: both.columns(n, n).into_owned(),
        })
    }
}

/// A per-series map (loadings or correlations) under the column `name`,
/// with the box corner split out for plotting.
pub fn write_map<W: Write>(
    entries: &[(String, Option<f64>)],
    name: &str,
    writer: W,
    format: Format,
) -> Result<()> {
    let rows = entries.iter().map(|(id, v)| {
        let (lat, lon) = match parse_box_id(id) {
            Some((lat, lon)) => (Field::Num(lat), Field::Num(lon)),
            None => (Field::Missing, Field::Missing),
        };
        vec![Field::Text(id.clone()), lat, lon, v.map_or(Field::Missing, Field::Num)]
    });
    write_records(writer, format, &["series_id", "lat", "lon", name], rows)
}

pub fn read_map<R: Read>(
    reader: R,
    format: Format,
    source: &str,
    name: &str,
) -> Result<Vec<(String, Option<f64>)>> {
    let mut out = Vec::new();
    for_each_record(reader, format, source, &["series_id", name], |rec| {
        out.push((rec.required_text("series_id")?, rec.num(name)?));
        Ok(())
    })?;
    Ok(out)
}

/// A change point with the series it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangePointRow {
    pub series_id: String,
    pub depth_m: f64,
    pub index: usize,
    pub month: YearMonth,
    pub kind: ChangeKind,
    pub slope_before: f64,
    pub slope_after: f64,
}

impl ChangePointRow {
    pub fn new(series_id: &str, depth_m: f64, cp: &ChangePoint) -> Self {
        Self {
            series_id: series_id.to_string(),
            depth_m,
            index: cp.index,
            month: cp.month,
            kind: cp.kind,
            slope_before: cp.slope_before,
            slope_after: cp.slope_after,
        }
    }
}

pub fn write_change_points<W: Write>(
    rows: &[ChangePointRow],
    writer: W,
    format: Format,
) -> Result<()> {
    let rows = rows.iter().map(|r| {
        let [y, m] = ym_fields(r.month);
        vec![
            Field::Text(r.series_id.clone()),
            Field::Num(r.depth_m),
            Field::Int(r.index as i64),
            y,
            m,
            Field::Text(r.kind.as_str().into()),
            Field::Num(r.slope_before),
            Field::Num(r.slope_after),
        ]
    });
    write_records(writer, format, &CHANGE_POINT_COLUMNS, rows)
}

pub fn read_change_points<R: Read>(
    reader: R,
    format: Format,
    source: &str,
) -> Result<Vec<ChangePointRow>> {
    let mut out = Vec::new();
    for_each_record(reader, format, source, &CHANGE_POINT_COLUMNS, |rec| {
        let index = usize::try_from(rec.int("index")?)
            .map_err(|_| rec.error("negative index"))?;
        out.push(ChangePointRow {
            series_id: rec.required_text("series_id")?,
            depth_m: rec.required_num("depth_m")?,
            index,
            month: year_month(rec)?,
            kind: rec
                .required_text("type")?
                .parse()
                .map_err(|e: Error| rec.error(e.to_string()))?,
            slope_before: rec.required_num("slope_before")?,
            slope_after: rec.required_num("slope_after")?,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Aligned series side by side: `index,year,month,<name…>`, missing values
/// empty.
pub fn write_series<W: Write>(
    series: &[(&str, &ObservationSeries)],
    writer: W,
    format: Format,
) -> Result<()> {
    let Some((_, first)) = series.first() else {
        return Err(Error::contract("no series to write"));
    };
    if series
        .iter()
        .any(|(_, s)| s.len() != first.len() || s.origin() != first.origin())
    {
        return Err(Error::contract("series differ in length or origin"));
    }
    let mut names = vec!["index", "year", "month"];
    names.extend(series.iter().map(|(n, _)| *n));
    let rows = (0..first.len()).map(|t| {
        let [y, m] = ym_fields(first.month_at(t));
        let mut row = vec![Field::Int(t as i64), y, m];
        row.extend(series.iter().map(|(_, s)| Field::num(s.values()[t])));
        row
    });
    write_records(writer, format, &names, rows)
}

pub fn read_series<R: Read>(
    reader: R,
    format: Format,
    source: &str,
    names: &[&str],
) -> Result<Vec<ObservationSeries>> {
    let mut required = vec!["index", "year", "month"];
    required.extend_from_slice(names);
    let mut steps = Steps::new();
    let mut cols = vec![Vec::new(); names.len()];
    for_each_record(reader, format, source, &required, |rec| {
        steps.push(rec)?;
        for (c, name) in cols.iter_mut().zip(names) {
            c.push(rec.num(name)?.unwrap_or(f64::NAN));
        }
        Ok(())
    })?;
    let (origin, _) = steps.finish(source)?;
    cols.into_iter()
        .map(|c| ObservationSeries::with_origin(c, origin, 12))
        .collect()
}
