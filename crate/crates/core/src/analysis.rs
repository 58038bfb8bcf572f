//! Post-processing of trends: change points, scalings and stratification.

use crate::error::{Error, Result};
use crate::series::{ObservationSeries, YearMonth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangeKind {
    SignChange,
    Inflection,
}

impl ChangeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::SignChange => "sign-change",
            ChangeKind::Inflection => "inflection",
        }
    }
}

impl std::str::FromStr for ChangeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sign-change" => Ok(ChangeKind::SignChange),
            "inflection" => Ok(ChangeKind::Inflection),
            other => Err(Error::data(format!("unknown change-point type {other:?}"))),
        }
    }
}

impl std::fmt::Display for ChangeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A persistent change in the slope of a trend.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangePoint {
    /// 0-based step.
    pub index: usize,
    pub month: YearMonth,
    pub kind: ChangeKind,
    /// Least-squares slope over the `min_persist` steps before the point.
    pub slope_before: f64,
    /// Least-squares slope over the `min_persist` steps after the point.
    pub slope_after: f64,
    /// Length of the shorter of the two slope regimes around the point.
    pub persistence: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangePointOptions {
    /// Shortest slope regime that counts, in steps.
    pub min_persist: usize,
    /// Width of the centered window for local slopes.
    pub slope_window: usize,
    /// Ratio of absolute slopes that makes an inflection.
    pub inflection_factor: f64,
}

impl Default for ChangePointOptions {
    fn default() -> Self {
        Self {
            min_persist: 24,
            slope_window: 12,
            inflection_factor: 3.0,
        }
    }
}

/// Least-squares slope of `v` against its index.
fn ols_slope(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = v.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in v.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (y - ym);
        sxx += dx * dx;
    }
    sxy / sxx
}

#[derive(Debug, Clone, Copy)]
struct Run {
    sign: i8,
    start: usize,
    /// Exclusive.
    end: usize,
}

impl Run {
    fn len(&self) -> usize {
        self.end - self.start
    }
}

/// Merges runs shorter than `min_len` (and all flat runs) into their
/// neighbours, shortest first, until every run is long enough.
fn merge_short_runs(mut runs: Vec<Run>, min_len: usize) -> Vec<Run> {
    loop {
        coalesce(&mut runs);
        if runs.len() <= 1 {
            return runs;
        }
        let victim = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.sign == 0 || r.len() < min_len)
            .min_by_key(|(i, r)| (r.sign != 0, r.len(), *i))
            .map(|(i, _)| i);
        let Some(i) = victim else {
            return runs;
        };
        let left = i.checked_sub(1).map(|j| runs[j]);
        let right = runs.get(i + 1).copied();
        let sign = match (left, right) {
            (Some(l), Some(r)) if l.sign == r.sign => l.sign,
            (Some(l), Some(r)) => {
                if l.len() >= r.len() {
                    l.sign
                } else {
                    r.sign
                }
            }
            (Some(l), None) => l.sign,
            (None, Some(r)) => r.sign,
            (None, None) => return runs,
        };
        runs[i].sign = sign;
    }
}

fn coalesce(runs: &mut Vec<Run>) {
    let mut out: Vec<Run> = Vec::with_capacity(runs.len());
    for r in runs.drain(..) {
        match out.last_mut() {
            Some(last) if last.sign == r.sign => last.end = r.end,
            _ => out.push(r),
        }
    }
    *runs = out;
}

/// Finds persistent sign changes and inflections of a trend's slope.
///
/// Local slopes are least-squares fits over a centered `slope_window`.
/// Maximal runs of one slope sign shorter than `min_persist` are absorbed
/// into their neighbours; every remaining boundary is a sign change, placed
/// at the trend's extremum within `min_persist` of it. Inside a run, a step
/// whose `min_persist`-long slopes before and after differ in magnitude by at
/// least `inflection_factor` is an inflection; candidates closer than
/// `min_persist` collapse to the largest ratio.
pub fn detect_change_points(
    trend: &ObservationSeries,
    opts: &ChangePointOptions,
) -> Result<Vec<ChangePoint>> {
    let y = trend.require_complete()?;
    let p = opts.min_persist;
    let w = opts.slope_window;
    if p == 0 || w < 2 {
        return Err(Error::contract(
            "min_persist must be positive and slope_window at least 2",
        ));
    }
    if !(opts.inflection_factor > 1.0) {
        return Err(Error::contract("inflection factor must exceed 1"));
    }
    let tau = y.len();
    if tau < 2 * p + w {
        return Err(Error::data(format!(
            "{tau} steps are too few: need at least 2·{p} + {w}"
        )));
    }

    // slope at t uses y[t − w/2 .. t − w/2 + w)
    let lead = w / 2;
    let first = lead;
    let last = tau - (w - lead); // inclusive
    let slopes: Vec<f64> = (first..=last)
        .map(|t| ols_slope(&y[t - lead..t - lead + w]))
        .collect();
    let scale = slopes.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if scale == 0.0 {
        return Ok(Vec::new());
    }
    let zero = 1e-12 * scale;
    let sign = |s: f64| -> i8 {
        if s > zero {
            1
        } else if s < -zero {
            -1
        } else {
            0
        }
    };

    let mut runs: Vec<Run> = Vec::new();
    for (k, &s) in slopes.iter().enumerate() {
        let t = first + k;
        let sg = sign(s);
        match runs.last_mut() {
            Some(r) if r.sign == sg => r.end = t + 1,
            _ => runs.push(Run {
                sign: sg,
                start: t,
                end: t + 1,
            }),
        }
    }
    let runs = merge_short_runs(runs, p);

    let window_slope = |a: isize, b: isize| -> f64 {
        let a = a.max(0) as usize;
        let b = (b.max(0) as usize).min(tau - 1);
        if b <= a {
            return 0.0;
        }
        ols_slope(&y[a..=b])
    };

    let mut points = Vec::new();
    for pair in runs.windows(2) {
        let (before, after) = (pair[0], pair[1]);
        let boundary = after.start;
        let lo = boundary.saturating_sub(p);
        let hi = (boundary + p).min(tau - 1);
        // rising into the boundary means a maximum, falling a minimum
        let want_max = before.sign > 0;
        let mut idx = lo;
        for t in lo..=hi {
            let better = if want_max { y[t] > y[idx] } else { y[t] < y[idx] };
            if better {
                idx = t;
            }
        }
        let i = idx as isize;
        points.push(ChangePoint {
            index: idx,
            month: trend.month_at(idx),
            kind: ChangeKind::SignChange,
            slope_before: window_slope(i - p as isize, i),
            slope_after: window_slope(i, i + p as isize),
            persistence: before.len().min(after.len()),
        });
    }

    let factor = opts.inflection_factor;
    for run in &runs {
        let mut candidates: Vec<(usize, f64, f64, f64)> = Vec::new();
        let from = run.start + p;
        let to = run.end.saturating_sub(p);
        for t in from..=to.min(tau - 1) {
            if t < p || t + p > tau {
                continue;
            }
            let b = ols_slope(&y[t - p..t]);
            let a = ols_slope(&y[t..t + p]);
            let (lo, hi) = if b.abs() < a.abs() {
                (b.abs(), a.abs())
            } else {
                (a.abs(), b.abs())
            };
            let same_sign = sign(a) == sign(b) && sign(a) != 0;
            if same_sign && hi >= factor * lo {
                candidates.push((t, hi / lo, b, a));
            }
        }
        candidates.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let mut taken: Vec<usize> = Vec::new();
        for (t, _, b, a) in candidates {
            if taken.iter().any(|&s| s.abs_diff(t) < p) {
                continue;
            }
            if points
                .iter()
                .any(|c: &ChangePoint| c.kind == ChangeKind::SignChange && c.index.abs_diff(t) < p)
            {
                continue;
            }
            taken.push(t);
            points.push(ChangePoint {
                index: t,
                month: trend.month_at(t),
                kind: ChangeKind::Inflection,
                slope_before: b,
                slope_after: a,
                persistence: (t - run.start).min(run.end - t),
            });
        }
    }
    points.sort_by_key(|c| c.index);
    points.dedup_by_key(|c| c.index);
    Ok(points)
}

/// Subtracts the series minimum so that the lowest value is exactly 0.
pub fn relative_scale(series: &ObservationSeries) -> Result<ObservationSeries> {
    let min = series
        .observed()
        .map(|(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::data("series is entirely missing"));
    }
    series.map_values(|_, v| v - min)
}

/// Subtracts the series mean.
pub fn standardize(series: &ObservationSeries) -> Result<ObservationSeries> {
    let mean = series
        .mean()
        .ok_or_else(|| Error::data("series is entirely missing"))?;
    series.map_values(|_, v| v - mean)
}

/// `shallow − deep`, missing where either input is.
pub fn stratification(
    shallow: &ObservationSeries,
    deep: &ObservationSeries,
) -> Result<ObservationSeries> {
    if shallow.len() != deep.len() || shallow.origin() != deep.origin() {
        return Err(Error::contract(format!(
            "series differ in length or origin ({} from {} vs {} from {})",
            shallow.len(),
            shallow.origin(),
            deep.len(),
            deep.origin()
        )));
    }
    let values = (0..shallow.len())
        .map(|t| match (shallow.get(t), deep.get(t)) {
            (Some(a), Some(b)) => a - b,
            _ => f64::NAN,
        })
        .collect();
    ObservationSeries::with_origin(values, shallow.origin(), shallow.period())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: Vec<f64>) -> ObservationSeries {
        ObservationSeries::new(v).unwrap()
    }

    #[test]
    fn v_shape_has_one_sign_change() {
        let y: Vec<f64> = (0..480).map(|t| (t as f64 - 240.0).abs()).collect();
        let cps = detect_change_points(&series(y), &ChangePointOptions::default()).unwrap();
        assert_eq!(cps.len(), 1);
        assert_eq!(cps[0].kind, ChangeKind::SignChange);
        assert!(cps[0].index.abs_diff(240) <= 2);
        assert!(cps[0].slope_before < 0.0 && cps[0].slope_after > 0.0);
    }

    #[test]
    fn straight_line_has_none() {
        let y = (0..300).map(|t| 0.3 * t as f64 + 2.0).collect();
        assert!(detect_change_points(&series(y), &ChangePointOptions::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn steepening_is_an_inflection() {
        let y = (0..400)
            .map(|t| if t < 200 { 0.1 * t as f64 } else { 20.0 + 1.0 * (t - 200) as f64 })
            .collect();
        let cps = detect_change_points(&series(y), &ChangePointOptions::default()).unwrap();
        assert_eq!(cps.len(), 1);
        assert_eq!(cps[0].kind, ChangeKind::Inflection);
        assert!(cps[0].index.abs_diff(200) <= 2);
    }

    #[test]
    fn short_series_is_rejected() {
        let y = (0..50).map(|t| t as f64).collect();
        assert!(matches!(
            detect_change_points(&series(y), &ChangePointOptions::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn scalings() {
        let s = series(vec![3.0, 1.0, f64::NAN, 4.0]);
        let r = relative_scale(&s).unwrap();
        assert_eq!(r.observed().map(|(_, v)| v).fold(f64::INFINITY, f64::min), 0.0);
        assert!(r.is_missing(2));
        let z = standardize(&s).unwrap();
        assert!(z.mean().unwrap().abs() < 1e-12);
        let c = series(vec![2.5; 6]);
        assert!(relative_scale(&c).unwrap().values().iter().all(|v| *v == 0.0));
        assert!(standardize(&c).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stratification_checks_alignment() {
        let a = series(vec![1.0, 2.0, 3.0]);
        let b = series(vec![1.0, 2.0]);
        assert!(stratification(&a, &b).is_err());
        let d = a.map_values(|_, v| v - 2.0).unwrap();
        assert!(stratification(&a, &d).unwrap().values().iter().all(|v| *v == 2.0));
    }
}
