//! Covariance-based stochastic subspace identification of common trends.
//!
//! A panel of `N` aligned series is summarized by its lagged covariances
//! `Λk = Cov(y(t+k), y(t))`. The block Hankel matrix of future-past
//! covariances factors as observability times reachability; its SVD gives
//! the state dimension and an innovation-form realization
//!
//! ```text
//! x(t+1) = A x(t) + K e(t),    y(t) = C x(t) + e(t)
//! ```
//!
//! whose states are the common trends and whose `C` is the loading matrix.

mod realize;
mod trends;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::series::YearMonth;

pub use realize::{realize, solve_riccati, RealizationModel, RiccatiSolution};
pub use trends::{
    correlation_map, extract_trends, loading_map, reconstruct, reconstruct_raw,
    CommonTrendsResult,
};

/// Aligned series of one depth, the unit of subspace analysis.
///
/// `data` is `τ × N` with `NaN` marking missing values. `trends`, when
/// present, holds each series' univariate smoothed trend in the same layout
/// and is what [`correlation_map`] correlates against.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    ids: Vec<String>,
    depth_m: f64,
    origin: YearMonth,
    data: DMatrix<f64>,
    trends: Option<DMatrix<f64>>,
}

impl SeriesPanel {
    pub fn new(
        ids: Vec<String>,
        depth_m: f64,
        origin: YearMonth,
        data: DMatrix<f64>,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::contract("panel needs at least one series"));
        }
        if data.ncols() != ids.len() {
            return Err(Error::contract(format!(
                "{} ids for {} data columns",
                ids.len(),
                data.ncols()
            )));
        }
        if data.nrows() < 2 {
            return Err(Error::data("panel needs at least 2 steps"));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::contract(format!("duplicate series id {id}")));
            }
        }
        if let Some((i, j)) = find(&data, |v| v.is_infinite()) {
            return Err(Error::data(format!(
                "infinite value in series {} at step {i}",
                ids[j]
            )));
        }
        Ok(Self {
            ids,
            depth_m,
            origin,
            data,
            trends: None,
        })
    }

    /// Attaches the univariate trends (same shape as the data, complete).
    pub fn with_trends(mut self, trends: DMatrix<f64>) -> Result<Self> {
        if trends.shape() != self.data.shape() {
            return Err(Error::contract(format!(
                "trend matrix is {:?}, data is {:?}",
                trends.shape(),
                self.data.shape()
            )));
        }
        if find(&trends, |v| !v.is_finite()).is_some() {
            return Err(Error::data("univariate trends must be finite"));
        }
        self.trends = Some(trends);
        Ok(self)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn depth_m(&self) -> f64 {
        self.depth_m
    }

    pub fn origin(&self) -> YearMonth {
        self.origin
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn trends(&self) -> Option<&DMatrix<f64>> {
        self.trends.as_ref()
    }

    /// Number of steps `τ`.
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn n_series(&self) -> usize {
        self.data.ncols()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    /// The data, or a contract error naming the first gap.
    pub fn require_complete(&self) -> Result<&DMatrix<f64>> {
        match find(&self.data, f64::is_nan) {
            Some((t, j)) => Err(Error::contract(format!(
                "series {} is missing step {t} ({}); fill gaps before identification",
                self.ids[j],
                self.origin.offset(t as i64)
            ))),
            None => Ok(&self.data),
        }
    }
}

fn find(m: &DMatrix<f64>, pred: impl Fn(f64) -> bool) -> Option<(usize, usize)> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if pred(m[(i, j)]) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Past and future horizons of the block Hankel matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HankelSpec {
    pub past: usize,
    pub future: usize,
    /// Center each series before forming covariances; otherwise second
    /// moments are taken about zero.
    pub demean: bool,
}

impl Default for HankelSpec {
    fn default() -> Self {
        Self {
            past: 1,
            future: 1,
            demean: false,
        }
    }
}

/// Lagged covariances arranged for realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Hankel {
    pub spec: HankelSpec,
    /// `(f·N) × (p·N)`, block `(i, j)` is `Λ(i+j−1)` (1-based blocks).
    pub h: DMatrix<f64>,
    /// Same layout shifted one lag: block `(i, j)` is `Λ(i+j)`.
    pub shifted: DMatrix<f64>,
    /// `Λ0 … Λ(p+f)`.
    pub lags: Vec<DMatrix<f64>>,
    /// Per-series means removed before the covariances (zeros unless
    /// demeaned).
    pub means: Vec<f64>,
}

impl Hankel {
    /// Assembles the Hankel pair from given covariances `Λ0 … Λ(p+f)`.
    pub fn from_covariances(lags: Vec<DMatrix<f64>>, spec: HankelSpec) -> Result<Self> {
        check_horizons(&spec)?;
        let need = spec.past + spec.future + 1;
        if lags.len() < need {
            return Err(Error::contract(format!(
                "need {need} covariance lags, got {}",
                lags.len()
            )));
        }
        let n = lags[0].nrows();
        if lags.iter().any(|l| l.shape() != (n, n)) {
            return Err(Error::contract("covariance lags must all be N × N"));
        }
        let block = |offset: usize| {
            let mut m = DMatrix::zeros(spec.future * n, spec.past * n);
            for i in 0..spec.future {
                for j in 0..spec.past {
                    m.view_mut((i * n, j * n), (n, n))
                        .copy_from(&lags[i + j + offset]);
                }
            }
            m
        };
        let h = block(1);
        let shifted = block(2);
        let mut lags = lags;
        lags.truncate(need);
        Ok(Self {
            spec,
            h,
            shifted,
            lags,
            means: vec![0.0; n],
        })
    }

    pub fn lambda0(&self) -> &DMatrix<f64> {
        &self.lags[0]
    }

    /// Number of series `N`.
    pub fn n_series(&self) -> usize {
        self.lags[0].nrows()
    }
}

fn check_horizons(spec: &HankelSpec) -> Result<()> {
    if spec.past == 0 || spec.future == 0 {
        return Err(Error::contract("Hankel horizons must be at least 1"));
    }
    Ok(())
}

/// Sample covariance `Λk = Σ y(t+k) y(t)ᵀ / (τ − k)` over all valid `t`.
pub fn lagged_covariance(y: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let tau = y.nrows();
    let lead = y.rows(k, tau - k);
    let lag = y.rows(0, tau - k);
    (lead.transpose() * lag) / (tau - k) as f64
}

/// Sample covariances of the panel and their Hankel arrangement.
pub fn build_hankel(panel: &SeriesPanel, spec: &HankelSpec) -> Result<Hankel> {
    check_horizons(spec)?;
    let data = panel.require_complete()?;
    let tau = panel.len();
    if tau <= spec.past + spec.future + 2 {
        return Err(Error::data(format!(
            "{tau} steps are too few for horizons p={}, f={}",
            spec.past, spec.future
        )));
    }
    let mut y = data.clone();
    let mut means = vec![0.0; y.ncols()];
    if spec.demean {
        for (mut col, m) in y.column_iter_mut().zip(&mut means) {
            *m = col.mean();
            col.add_scalar_mut(-*m);
        }
    }
    let lags = (0..=spec.past + spec.future)
        .map(|k| lagged_covariance(&y, k))
        .collect();
    let mut hankel = Hankel::from_covariances(lags, *spec)?;
    hankel.means = means;
    Ok(hankel)
}

/// How many singular directions to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankPolicy {
    Fixed(usize),
    /// Smallest rank whose cumulative share of the singular value sum
    /// reaches the threshold.
    Energy(f64),
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::Fixed(4)
    }
}

/// Realization at the rank chosen by `policy` from the Hankel spectrum.
pub fn identify(hankel: &Hankel, policy: RankPolicy) -> Result<RealizationModel> {
    let mut sv: Vec<f64> = hankel.h.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    realize(hankel, select_rank(&sv, policy)?)
}

/// Values at or below this fraction of the largest are numerically null.
const NULL_SINGULAR: f64 = 1e-12;

pub fn select_rank(singular_values: &[f64], policy: RankPolicy) -> Result<usize> {
    if singular_values.is_empty() {
        return Err(Error::contract("empty singular value spectrum"));
    }
    if singular_values.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        || singular_values.windows(2).any(|w| w[1] > w[0])
    {
        return Err(Error::contract(
            "singular values must be finite, non-negative and descending",
        ));
    }
    match policy {
        RankPolicy::Fixed(n) => {
            if n == 0 {
                return Err(Error::contract("rank must be at least 1"));
            }
            let cut = NULL_SINGULAR * singular_values[0];
            let nonzero = singular_values.iter().filter(|&&v| v > cut).count();
            Ok(n.min(nonzero))
        }
        RankPolicy::Energy(theta) => {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::contract(format!(
                    "energy threshold must be in (0, 1], got {theta}"
                )));
            }
            let total: f64 = singular_values.iter().sum();
            if total == 0.0 {
                return Err(Error::data("all singular values are zero"));
            }
            let mut acc = 0.0;
            for (i, v) in singular_values.iter().enumerate() {
                acc += v;
                // relative slack absorbs rounding in the running sum
                if acc >= theta * total * (1.0 - 1e-14) {
                    return Ok(i + 1);
                }
            }
            Ok(singular_values.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(data: DMatrix<f64>) -> SeriesPanel {
        let ids = (0..data.ncols()).map(|j| format!("s{j}")).collect();
        SeriesPanel::new(ids, 10.0, YearMonth::default(), data).unwrap()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(select_rank(&[10.0, 5.0, 1e-13], RankPolicy::Energy(0.99)).unwrap(), 2);
        assert_eq!(select_rank(&[4.0, 3.0, 2.0, 1.0, 0.5], RankPolicy::Fixed(4)).unwrap(), 4);
        assert_eq!(select_rank(&[1.0; 10], RankPolicy::Energy(0.5)).unwrap(), 5);
        assert_eq!(select_rank(&[3.0, 1e-14], RankPolicy::Fixed(4)).unwrap(), 1);
        assert!(select_rank(&[], RankPolicy::Fixed(1)).is_err());
        assert!(select_rank(&[1.0, 2.0], RankPolicy::Fixed(1)).is_err());
    }

    #[test]
    fn hankel_shape_and_blocks() {
        let y = DMatrix::from_fn(40, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let p = panel(y);
        let h = build_hankel(&p, &HankelSpec::default()).unwrap();
        assert_eq!(h.h.shape(), (3, 3));
        assert_eq!(h.h, h.lags[1]);
        assert_eq!(h.shifted, h.lags[2]);
        let spec = HankelSpec {
            past: 2,
            future: 3,
            demean: true,
        };
        let h = build_hankel(&p, &spec).unwrap();
        assert_eq!(h.h.shape(), (9, 6));
        assert_eq!(h.h.view((6, 3), (3, 3)), h.lags[4].view((0, 0), (3, 3)));
        assert_eq!(h.shifted.view((6, 3), (3, 3)), h.lags[5].view((0, 0), (3, 3)));
    }

    #[test]
    fn missing_values_must_be_filled() {
        let mut y = DMatrix::from_element(20, 2, 1.0);
        y[(4, 1)] = f64::NAN;
        let err = build_hankel(&panel(y), &HankelSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(err.to_string().contains("fill"));
    }

    #[test]
    fn short_panel_is_a_data_error() {
        let y = DMatrix::from_element(4, 2, 1.0);
        assert!(matches!(
            build_hankel(&panel(y), &HankelSpec::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn panel_rejects_duplicates_and_shape_mismatch() {
        let y = DMatrix::zeros(5, 2);
        assert!(SeriesPanel::new(vec!["a".into(), "a".into()], 0.0, YearMonth::default(), y.clone()).is_err());
        assert!(SeriesPanel::new(vec!["a".into()], 0.0, YearMonth::default(), y).is_err());
    }
}
