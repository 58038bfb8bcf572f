use nalgebra::DMatrix;

use super::{RealizationModel, SeriesPanel};
use crate::error::{Error, Result};
use crate::series::{ObservationSeries, YearMonth};

/// Common-trend trajectories of one panel.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonTrendsResult {
    pub ids: Vec<String>,
    pub origin: YearMonth,
    /// `τ × n` one-step predicted states `x(t)` of the innovation recursion.
    pub states: DMatrix<f64>,
    /// `τ × n` states updated with the current observation; these are the
    /// trends used for maps and reconstructions.
    pub trends: DMatrix<f64>,
    /// `N × n` loading matrix `C`.
    pub loadings: DMatrix<f64>,
    /// Minimum of each trend, the zero point of its relative scale.
    pub offsets: Vec<f64>,
}

impl CommonTrendsResult {
    pub fn n_trends(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    /// Trend `j` (1-based) as a plain vector.
    pub fn trend(&self, j: usize) -> Result<Vec<f64>> {
        check_index(j, self.n_trends())?;
        Ok(self.trends.column(j - 1).iter().copied().collect())
    }

    fn series_index(&self, id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::contract(format!("unknown series id {id}")))
    }
}

fn check_index(j: usize, n: usize) -> Result<()> {
    if j == 0 || j > n {
        return Err(Error::contract(format!(
            "trend index {j} outside 1..={n}"
        )));
    }
    Ok(())
}

/// Runs the innovation recursion over the panel from `x(1) = 0`:
/// `e(t) = y(t) − μ − C x(t)` (with `μ` the model's series means), `x(t+1) = A x(t) + K e(t)`.
///
/// Alongside the predicted `x(t)` it records the updated state
/// `x(t) + (CᵀΔ⁻¹C)⁻¹CᵀΔ⁻¹ e(t)` with `Δ` the innovation covariance, i.e.
/// the generalized least-squares coordinates of `y(t)` on the loadings
/// around the prediction.
pub fn extract_trends(model: &RealizationModel, panel: &SeriesPanel) -> Result<CommonTrendsResult> {
    let y = panel.require_complete()?;
    let big_n = model.n_series();
    if panel.n_series() != big_n {
        return Err(Error::contract(format!(
            "model has {big_n} series, panel has {}",
            panel.n_series()
        )));
    }
    let n = model.n;
    let c = &model.c;
    let chol = model.innovation_cov.clone().cholesky().ok_or_else(|| {
        Error::Numerical("innovation covariance is not positive definite".into())
    })?;
    let di_c = chol.solve(c); // Δ⁻¹C, N × n
    let info = c.transpose() * &di_c;
    let info = (&info + info.transpose()) * 0.5;
    let update = info
        .cholesky()
        .ok_or_else(|| Error::Numerical("loadings are not identified (CᵀΔ⁻¹C singular)".into()))?
        .solve(&di_c.transpose()); // n × N

    if model.means.len() != big_n {
        return Err(Error::contract("model means do not match the panel"));
    }
    let means = nalgebra::DVector::from_column_slice(&model.means);
    let tau = panel.len();
    let mut states = DMatrix::zeros(tau, n);
    let mut trends = DMatrix::zeros(tau, n);
    let mut x = nalgebra::DVector::<f64>::zeros(n);
    for t in 0..tau {
        let yt = y.row(t).transpose() - &means;
        let e = yt - c * &x;
        states.row_mut(t).copy_from(&x.transpose());
        let s = &x + &update * &e;
        trends.row_mut(t).copy_from(&s.transpose());
        x = &model.a * &x + &model.k * &e;
    }
    if states.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("common-trend recursion diverged".into()));
    }
    let offsets = trends
        .column_iter()
        .map(|col| col.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    Ok(CommonTrendsResult {
        ids: panel.ids().to_vec(),
        origin: panel.origin(),
        states,
        trends,
        loadings: c.clone(),
        offsets,
    })
}

/// Column `j` (1-based) of the loading matrix, keyed by series id.
pub fn loading_map(result: &CommonTrendsResult, j: usize) -> Result<Vec<(String, f64)>> {
    check_index(j, result.n_trends())?;
    Ok(result
        .ids
        .iter()
        .cloned()
        .zip(result.loadings.column(j - 1).iter().copied())
        .collect())
}

/// Pearson correlation of each series' univariate trend with trend `j`;
/// `None` where either side has no variance.
pub fn correlation_map(
    panel: &SeriesPanel,
    result: &CommonTrendsResult,
    j: usize,
) -> Result<Vec<(String, Option<f64>)>> {
    check_index(j, result.n_trends())?;
    let trends = panel.trends().ok_or_else(|| {
        Error::contract("correlation map needs the panel's univariate trends")
    })?;
    if trends.nrows() != result.len() || panel.ids() != result.ids.as_slice() {
        return Err(Error::contract(
            "panel does not match the common-trend result",
        ));
    }
    let common: Vec<f64> = result.trends.column(j - 1).iter().copied().collect();
    Ok(panel
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let series: Vec<f64> = trends.column(i).iter().copied().collect();
            (id.clone(), pearson(&series, &common))
        })
        .collect())
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    // a spread at rounding level of the mean counts as constant
    let flat = |ss: f64, m: f64| ss <= (1e-12 * m.abs()).powi(2) * n;
    if flat(saa, ma) || flat(sbb, mb) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// `Σ_{j ∈ subset} C[i, j]·trend_j(t)` for series `id`, on its own scale.
pub fn reconstruct_raw(
    result: &CommonTrendsResult,
    id: &str,
    subset: &[usize],
) -> Result<ObservationSeries> {
    let i = result.series_index(id)?;
    let mut seen = vec![false; result.n_trends()];
    for &j in subset {
        check_index(j, result.n_trends())?;
        if std::mem::replace(&mut seen[j - 1], true) {
            return Err(Error::contract(format!("trend {j} listed twice")));
        }
    }
    let values = (0..result.len())
        .map(|t| {
            subset
                .iter()
                .map(|&j| result.loadings[(i, j - 1)] * result.trends[(t, j - 1)])
                .sum()
        })
        .collect();
    ObservationSeries::with_origin(values, result.origin, 12)
}

/// [`reconstruct_raw`] shifted to mean zero.
pub fn reconstruct(
    result: &CommonTrendsResult,
    id: &str,
    subset: &[usize],
) -> Result<ObservationSeries> {
    let raw = reconstruct_raw(result, id, subset)?;
    crate::analysis::standardize(&raw)
}
