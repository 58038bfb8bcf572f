//! Gridded input, box averaging and the record formats of every product.
//!
//! A grid file has one row per cell, depth and month:
//!
//! ```text
//! lat,lon,depth_m,year,month,value
//! 20.25,110.25,10,1958,1,18.42
//! 20.25,110.75,10,1958,1,
//! ```
//!
//! with an empty `value` (or `null` in line-JSON) for a missing cell-month.
//! Cells that never appear are treated as missing throughout.

mod export;
mod table;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::series::YearMonth;
use crate::subspace::SeriesPanel;

pub use export::*;
pub use table::{for_each_record, write_records, Field, Format, Record};

pub const GRID_COLUMNS: [&str; 6] = ["lat", "lon", "depth_m", "year", "month", "value"];

/// Coordinates are compared on a micro-degree (and millimetre) lattice.
const KEY_SCALE: f64 = 1e6;

fn key(v: f64) -> i64 {
    (v * KEY_SCALE).round() as i64
}

fn unkey(k: i64) -> f64 {
    k as f64 / KEY_SCALE
}

/// Maps a longitude onto `[0, 360)`.
pub fn normalize_lon(lon: f64) -> f64 {
    let l = lon.rem_euclid(360.0);
    // rem_euclid(-1e-20) rounds up to 360
    if l >= 360.0 {
        0.0
    } else {
        l
    }
}

/// Monthly values on a regular lat/lon lattice at a few depths.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDataset {
    lats: Vec<f64>,
    lons: Vec<f64>,
    depths: Vec<f64>,
    origin: YearMonth,
    len: usize,
    /// `[depth][t][lat][lon]`, `NaN` = missing.
    values: Vec<f64>,
}

impl GriddedDataset {
    /// Builds a dataset from axes and a value function; `value(d, t, i, j)`
    /// returns `NaN` for missing. Longitudes are normalized, then every axis
    /// must be strictly increasing and lie on a regular lattice.
    pub fn from_fn(
        lats: Vec<f64>,
        lons: Vec<f64>,
        depths: Vec<f64>,
        origin: YearMonth,
        len: usize,
        mut value: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut lon_order: Vec<(f64, usize)> = lons
            .iter()
            .enumerate()
            .map(|(j, &l)| (normalize_lon(l), j))
            .collect();
        lon_order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let sorted_lons: Vec<f64> = lon_order.iter().map(|p| p.0).collect();
        check_axis("latitude", &lats)?;
        check_axis("longitude", &sorted_lons)?;
        check_axis("depth", &depths)?;
        if len == 0 {
            return Err(Error::data("dataset has no months"));
        }
        let (nl, no) = (lats.len(), sorted_lons.len());
        let mut values = Vec::with_capacity(depths.len() * len * nl * no);
        for (d, depth) in depths.iter().enumerate() {
            for t in 0..len {
                for (i, lat) in lats.iter().enumerate() {
                    for &(_, j) in &lon_order {
                        let v = value(d, t, i, j);
                        if v.is_infinite() {
                            return Err(Error::data(format!(
                                "infinite value at lat {} lon {} depth {} {}",
                                lat,
                                lons[j],
                                depth,
                                origin.offset(t as i64)
                            )));
                        }
                        values.push(v);
                    }
                }
            }
        }
        Ok(Self {
            lats,
            lons: sorted_lons,
            depths,
            origin,
            len,
            values,
        })
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    /// Longitudes in `[0, 360)`, increasing.
    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn origin(&self) -> YearMonth {
        self.origin
    }

    /// Number of months `τ`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Position of a depth level, or a data error for an unknown depth.
    pub fn depth_index(&self, depth_m: f64) -> Result<usize> {
        self.depths
            .iter()
            .position(|&d| key(d) == key(depth_m))
            .ok_or_else(|| {
                Error::data(format!(
                    "unknown depth {depth_m} m (dataset has {:?})",
                    self.depths
                ))
            })
    }

    /// Value at depth `d`, month `t`, latitude `i`, longitude `j` (`NaN` if
    /// missing).
    pub fn value(&self, d: usize, t: usize, i: usize, j: usize) -> f64 {
        let (nl, no) = (self.lats.len(), self.lons.len());
        self.values[((d * self.len + t) * nl + i) * no + j]
    }

    /// Reads a grid file. See [`ingest_reader`].
    pub fn ingest(path: &Path, format: Format, opts: &IngestOptions) -> Result<Self> {
        let file = table::open(path)?;
        Self::ingest_reader(file, format, &path.display().to_string(), opts)
    }

    /// Parses grid records and validates them: duplicate cell-months, depths
    /// outside `opts.depths`, months with no records inside the covered
    /// span, and coordinates off a regular lattice are all data errors.
    pub fn ingest_reader<R: Read>(
        reader: R,
        format: Format,
        source: &str,
        opts: &IngestOptions,
    ) -> Result<Self> {
        struct Row {
            lat: i64,
            lon: i64,
            depth: i64,
            month: i64,
            value: f64,
            line: u64,
        }
        let allowed: Option<BTreeSet<i64>> =
            opts.depths.as_ref().map(|ds| ds.iter().map(|&d| key(d)).collect());
        let mut rows = Vec::new();
        for_each_record(reader, format, source, &GRID_COLUMNS, |rec| {
            let lat = rec.required_num("lat")?;
            if !(-90.0..=90.0).contains(&lat) {
                return Err(rec.error(format!("latitude {lat} outside [-90, 90]")));
            }
            let lon = normalize_lon(rec.required_num("lon")?);
            let depth = rec.required_num("depth_m")?;
            if let Some(allowed) = &allowed {
                if !allowed.contains(&key(depth)) {
                    return Err(rec.error(format!("unknown depth {depth} m")));
                }
            }
            let year = rec.int("year")?;
            let month = rec.int("month")?;
            let ym = i32::try_from(year)
                .ok()
                .zip(u32::try_from(month).ok())
                .and_then(|(y, m)| YearMonth::new(y, m).ok())
                .ok_or_else(|| rec.error(format!("invalid year/month {year}-{month}")))?;
            rows.push(Row {
                lat: key(lat),
                lon: key(lon),
                depth: key(depth),
                month: ym.ordinal(),
                value: rec.num("value")?.unwrap_or(f64::NAN),
                line: rec.line,
            });
            Ok(())
        })?;
        if rows.is_empty() {
            return Err(Error::data(format!("{source}: no records")));
        }

        let axis = |f: &dyn Fn(&Row) -> i64| -> Vec<i64> {
            let set: BTreeSet<i64> = rows.iter().map(f).collect();
            set.into_iter().collect()
        };
        let lat_keys = axis(&|r| r.lat);
        let lon_keys = axis(&|r| r.lon);
        let depth_keys = axis(&|r| r.depth);
        let months = axis(&|r| r.month);
        let (first, last) = (months[0], *months.last().unwrap());
        if let Some(gap) = (first..=last).find(|m| months.binary_search(m).is_err()) {
            return Err(Error::data(format!(
                "{source}: time axis has a gap, no records for {}",
                YearMonth::from_ordinal(gap)
            )));
        }
        let len = (last - first + 1) as usize;
        let index = |keys: &[i64], k: i64| keys.binary_search(&k).unwrap();
        let (nl, no) = (lat_keys.len(), lon_keys.len());
        let n_slots = depth_keys.len() * len * nl * no;
        let mut values = vec![f64::NAN; n_slots];
        let mut seen: Vec<u64> = vec![0; n_slots];
        for r in &rows {
            let d = index(&depth_keys, r.depth);
            let t = (r.month - first) as usize;
            let slot = ((d * len + t) * nl + index(&lat_keys, r.lat)) * no + index(&lon_keys, r.lon);
            if seen[slot] != 0 {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: r.line,
                    message: format!(
                        "duplicate cell lat {} lon {} depth {} {} (first at line {})",
                        unkey(r.lat),
                        unkey(r.lon),
                        unkey(r.depth),
                        YearMonth::from_ordinal(r.month),
                        seen[slot]
                    ),
                });
            }
            seen[slot] = r.line.max(1);
            values[slot] = r.value;
        }
        let lats: Vec<f64> = lat_keys.iter().map(|&k| unkey(k)).collect();
        let lons: Vec<f64> = lon_keys.iter().map(|&k| unkey(k)).collect();
        let depths: Vec<f64> = depth_keys.iter().map(|&k| unkey(k)).collect();
        check_axis("latitude", &lats)?;
        check_axis("longitude", &lons)?;
        Ok(Self {
            lats,
            lons,
            depths,
            origin: YearMonth::from_ordinal(first),
            len,
            values,
        })
    }

    /// Writes every cell-month, depth then month then latitude then
    /// longitude. Reading the output back gives an equal dataset.
    pub fn write<W: Write>(&self, writer: W, format: Format) -> Result<()> {
        let (nl, no) = (self.lats.len(), self.lons.len());
        let rows = (0..self.depths.len()).flat_map(move |d| {
            (0..self.len).flat_map(move |t| {
                let ym = self.origin.offset(t as i64);
                (0..nl).flat_map(move |i| {
                    (0..no).map(move |j| {
                        vec![
                            Field::Num(self.lats[i]),
                            Field::Num(self.lons[j]),
                            Field::Num(self.depths[d]),
                            Field::Int(ym.year as i64),
                            Field::Int(ym.month as i64),
                            Field::num(self.value(d, t, i, j)),
                        ]
                    })
                })
            })
        });
        write_records(writer, format, &GRID_COLUMNS, rows)
    }

    pub fn write_path(&self, path: &Path, format: Format) -> Result<()> {
        self.write(table::create(path)?, format)
    }
}

/// Axes must be finite, strictly increasing, and every value a whole
/// number of smallest steps from the first.
fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::data(format!("empty {name} axis")));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(format!("non-finite {name} coordinate")));
    }
    if let Some(w) = axis.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::data(format!(
            "{name} axis not strictly increasing at {} → {}",
            w[0], w[1]
        )));
    }
    if name == "depth" || axis.len() < 3 {
        return Ok(());
    }
    let step = axis
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    for &v in axis {
        let k = (v - axis[0]) / step;
        if (k - k.round()).abs() > 1e-6 {
            return Err(Error::data(format!(
                "{name} {v} is off the regular {step}° lattice starting at {}",
                axis[0]
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOptions {
    /// Depth levels the file may contain; any other depth is a data error.
    /// `None` accepts whatever is present.
    pub depths: Option<Vec<f64>>,
}

/// A lat/lon rectangle, longitudes east in `[0, 360]` with
/// `lon_min < lon_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Region {
    /// 20°N–65°N, 110°E–250°E.
    pub const NORTH_PACIFIC: Region = Region {
        lat_min: 20.0,
        lat_max: 65.0,
        lon_min: 110.0,
        lon_max: 250.0,
    };

    /// Box corners, latitude-major then longitude, after checking that
    /// the region is a whole number of boxes aligned to multiples of the box
    /// size.
    pub fn boxes(&self, box_size: f64) -> Result<Vec<BoxDefinition>> {
        if !(box_size > 0.0) || !box_size.is_finite() {
            return Err(Error::contract(format!("box size {box_size} must be positive")));
        }
        let r = *self;
        if !(r.lat_min < r.lat_max && r.lon_min < r.lon_max)
            || r.lat_min < -90.0
            || r.lat_max > 90.0
            || r.lon_min < 0.0
            || r.lon_max > 360.0
        {
            return Err(Error::contract(format!("invalid region {r:?}")));
        }
        let steps = |v: f64| -> Result<i64> {
            let k = v / box_size;
            if (k - k.round()).abs() > 1e-9 {
                return Err(Error::contract(format!(
                    "region edge {v} is not a multiple of the {box_size}° box size"
                )));
            }
            Ok(k.round() as i64)
        };
        let (la0, la1) = (steps(r.lat_min)?, steps(r.lat_max)?);
        let (lo0, lo1) = (steps(r.lon_min)?, steps(r.lon_max)?);
        let mut out = Vec::with_capacity(((la1 - la0) * (lo1 - lo0)) as usize);
        for a in la0..la1 {
            for o in lo0..lo1 {
                out.push(BoxDefinition {
                    lat: a as f64 * box_size,
                    lon: o as f64 * box_size,
                    size: box_size,
                });
            }
        }
        Ok(out)
    }
}

/// A square box given by its south-west corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDefinition {
    pub lat: f64,
    pub lon: f64,
    pub size: f64,
}

impl BoxDefinition {
    /// `"20N_110E"`; southern corners use `S`, longitudes stay in
    /// `[0, 360)` east.
    pub fn id(&self) -> String {
        let hemi = if self.lat < 0.0 { 'S' } else { 'N' };
        format!("{}{hemi}_{}E", coord(self.lat.abs()), coord(self.lon))
    }

    /// Whether a cell center lies in `[SW, SW + size)` on both axes.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let inside = |v: f64, lo: f64| {
            // tolerate the rounding of cell centers read from text
            let x = (v - lo) / self.size;
            x > -1e-9 && x < 1.0 - 1e-9
        };
        inside(lat, self.lat) && inside(normalize_lon(lon), self.lon)
    }
}

fn coord(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Inverse of [`BoxDefinition::id`] for sorting; `None` for foreign ids.
pub fn parse_box_id(id: &str) -> Option<(f64, f64)> {
    let (lat, lon) = id.split_once('_')?;
    let sign = match lat.chars().last()? {
        'N' => 1.0,
        'S' => -1.0,
        _ => return None,
    };
    let lat: f64 = lat[..lat.len() - 1].parse().ok()?;
    let lon: f64 = lon.strip_suffix('E')?.parse().ok()?;
    Some((sign * lat, lon))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxOptions {
    /// Edge length in degrees.
    pub box_size: f64,
    /// Smallest fraction of a box's ocean cells (cells observed at least
    /// once at this depth) that must be present for a box-month to count.
    pub min_coverage: f64,
    /// Weight cells by `cos(latitude)` instead of equally.
    pub cos_lat_weights: bool,
    /// Boxes missing more than this fraction of months are dropped.
    pub max_missing_fraction: f64,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self {
            box_size: 5.0,
            min_coverage: 0.5,
            cos_lat_weights: false,
            max_missing_fraction: 0.5,
        }
    }
}

impl BoxOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return Err(Error::contract(format!(
                "min_coverage {} outside (0, 1]",
                self.min_coverage
            )));
        }
        if !(0.0..=1.0).contains(&self.max_missing_fraction) {
            return Err(Error::contract(format!(
                "max_missing_fraction {} outside [0, 1]",
                self.max_missing_fraction
            )));
        }
        Ok(())
    }
}

/// Box-month means at one depth.
///
/// Each box-month is the (optionally cos-latitude weighted) mean of the
/// non-missing cells whose centers fall in the box, or missing when those
/// cells cover less than `min_coverage` of the box's ocean cells. Boxes
/// without ocean cells, or missing in more than `max_missing_fraction` of
/// months, are left out. Series are ordered by corner latitude, then
/// longitude.
pub fn box_average(
    ds: &GriddedDataset,
    depth_m: f64,
    region: &Region,
    opts: &BoxOptions,
) -> Result<SeriesPanel> {
    opts.validate()?;
    let d = ds.depth_index(depth_m)?;
    let boxes = region.boxes(opts.box_size)?;
    let tau = ds.len();
    let mut by_box: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    // each cell belongs to at most one box since boxes tile without overlap
    for (i, &lat) in ds.lats.iter().enumerate() {
        for (j, &lon) in ds.lons.iter().enumerate() {
            if let Some(b) = boxes.iter().position(|b| b.contains(lat, lon)) {
                by_box.entry(b).or_default().push((i, j));
            }
        }
    }
    let mut ids = Vec::new();
    let mut columns = Vec::new();
    for (b, cells) in by_box {
        let ocean: Vec<(usize, usize)> = cells
            .into_iter()
            .filter(|&(i, j)| (0..tau).any(|t| !ds.value(d, t, i, j).is_nan()))
            .collect();
        if ocean.is_empty() {
            continue;
        }
        let weight = |i: usize| {
            if opts.cos_lat_weights {
                ds.lats[i].to_radians().cos()
            } else {
                1.0
            }
        };
        let mut series = vec![f64::NAN; tau];
        let mut missing = 0;
        for (t, out) in series.iter_mut().enumerate() {
            // accumulated around the first value so a uniform box is exact
            let (mut pivot, mut sum, mut wsum, mut count) = (f64::NAN, 0.0, 0.0, 0usize);
            for &(i, j) in &ocean {
                let v = ds.value(d, t, i, j);
                if !v.is_nan() {
                    if pivot.is_nan() {
                        pivot = v;
                    }
                    let w = weight(i);
                    sum += w * (v - pivot);
                    wsum += w;
                    count += 1;
                }
            }
            if count > 0 && count as f64 >= opts.min_coverage * ocean.len() as f64 {
                *out = pivot + sum / wsum;
            } else {
                missing += 1;
            }
        }
        if missing as f64 > opts.max_missing_fraction * tau as f64 {
            continue;
        }
        ids.push(boxes[b].id());
        columns.push(series);
    }
    if ids.is_empty() {
        return Err(Error::data(format!(
            "no box in {region:?} has data at depth {depth_m} m"
        )));
    }
    let data = DMatrix::from_fn(tau, ids.len(), |t, k| columns[k][t]);
    SeriesPanel::new(ids, depth_m, ds.origin, data)
}
