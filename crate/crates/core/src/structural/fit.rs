use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::series::{ObservationSeries, YearMonth};
use crate::ssm::{filter, loglik, smooth};

use super::model::{assemble, CycleMode, StructuralParams, StructuralSpec};

/// Variances are searched within `[scale·FLOOR, scale·CEIL]`, where `scale`
/// is the sample variance of the series.
const VAR_FLOOR: f64 = 1e-10;
const VAR_CEIL: f64 = 1e3;
const BOUND_PENALTY: f64 = 100.0;

/// Optimizer settings for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub simplex: NelderMeadOptions,
    /// One simplex run per ratio; disturbance variances start at
    /// `ratio · v / 100` and the observation variance at `v / 2`.
    pub start_ratios: Vec<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            simplex: NelderMeadOptions::default(),
            start_ratios: vec![0.1, 1.0, 10.0],
        }
    }
}

/// Smoothed components of one series together with the parameters they were
/// computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub trend: Vec<f64>,
    pub trend_var: Vec<f64>,
    /// All zeros when the model has no seasonal.
    pub seasonal: Vec<f64>,
    pub seasonal_var: Vec<f64>,
    /// The cycle `ψ(t)`; all zeros when the model has no cycle.
    pub cycle: Vec<f64>,
    pub cycle_var: Vec<f64>,
    /// `y − T − S − I` at observed steps, `0` (its prior mean) at missing ones.
    pub irregular: Vec<f64>,
    pub irregular_var: Vec<f64>,
    pub params: StructuralParams,
    pub loglik: f64,
    /// Objective evaluations over all starts (0 for a plain decomposition).
    pub evals: usize,
    pub converged: bool,
    pub origin: YearMonth,
    pub missing: Vec<bool>,
}

impl DecompositionResult {
    pub fn len(&self) -> usize {
        self.trend.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trend.is_empty()
    }
}

/// Filters and smooths at fixed parameters and splits the smoothed state
/// into components.
pub fn decompose(
    obs: &ObservationSeries,
    spec: &StructuralSpec,
    params: &StructuralParams,
) -> Result<DecompositionResult> {
    let model = assemble(spec, params)?;
    let f = filter(&model, obs)?;
    let s = smooth(&model, &f)?;
    let layout = spec.layout();
    let tau = obs.len();
    let zeros = || vec![0.0; tau];
    let pick = |at: Option<usize>| match at {
        Some(i) => (s.component(i), s.component_var(i)),
        None => (zeros(), zeros()),
    };
    let (trend, trend_var) = pick(Some(layout.trend));
    let (seasonal, seasonal_var) = pick(layout.seasonal);
    let (cycle, cycle_var) = pick(layout.cycle);

    let z = &model.obs_row;
    let mut irregular = zeros();
    let mut irregular_var = zeros();
    for t in 0..tau {
        match obs.get(t) {
            Some(y) => {
                irregular[t] = y - trend[t] - seasonal[t] - cycle[t];
                irregular_var[t] = (z.transpose() * &s.cov[t] * z)[0].max(0.0);
            }
            None => irregular_var[t] = params.obs_var,
        }
    }
    Ok(DecompositionResult {
        trend,
        trend_var,
        seasonal,
        seasonal_var,
        cycle,
        cycle_var,
        irregular,
        irregular_var,
        params: *params,
        loglik: f.loglik,
        evals: 0,
        converged: true,
        origin: obs.origin(),
        missing: obs.missing().to_vec(),
    })
}

/// Maps the unconstrained search vector to model parameters.
struct Transform<'a> {
    spec: &'a StructuralSpec,
    scale: f64,
    estimate_cycle: bool,
}

impl<'a> Transform<'a> {
    fn new(spec: &'a StructuralSpec, scale: f64) -> Self {
        Self {
            spec,
            scale,
            estimate_cycle: spec.cycle && spec.cycle_mode == CycleMode::Estimate,
        }
    }

    fn variance_count(&self) -> usize {
        2 + self.spec.seasonal as usize + self.spec.cycle as usize
    }

    fn dim(&self) -> usize {
        self.variance_count() + if self.estimate_cycle { 2 } else { 0 }
    }

    fn start(&self, ratio: f64) -> Vec<f64> {
        let mut x = vec![(self.scale / 2.0).ln()];
        x.extend((1..self.variance_count()).map(|_| (ratio * self.scale / 100.0).ln()));
        if self.estimate_cycle {
            x.extend([0.0, 0.0]);
        }
        x
    }

    /// Parameters plus a penalty for log-variances pushed past their bounds.
    fn params(&self, x: &[f64]) -> (StructuralParams, f64) {
        let lo = (self.scale * VAR_FLOOR).ln();
        let hi = (self.scale * VAR_CEIL).ln();
        let mut penalty = 0.0;
        let mut vars = x[..self.variance_count()].iter().map(|&u| {
            let c = u.clamp(lo, hi);
            penalty += BOUND_PENALTY * (u - c) * (u - c);
            c.exp()
        });
        let obs_var = vars.next().unwrap_or(0.0);
        let trend_var = vars.next().unwrap_or(0.0);
        let seasonal_var = if self.spec.seasonal {
            vars.next().unwrap_or(0.0)
        } else {
            0.0
        };
        let cycle_var = if self.spec.cycle {
            vars.next().unwrap_or(0.0)
        } else {
            0.0
        };
        drop(vars);
        let (rho, lambda) = match self.spec.cycle_mode {
            CycleMode::Fixed { rho, lambda } => (rho, lambda),
            CycleMode::Estimate if self.estimate_cycle => {
                let k = self.variance_count();
                (
                    logistic(x[k], self.spec.rho_bounds),
                    logistic(x[k + 1], self.spec.lambda_bounds),
                )
            }
            CycleMode::Estimate => (
                midpoint(self.spec.rho_bounds),
                midpoint(self.spec.lambda_bounds),
            ),
        };
        let params = StructuralParams {
            trend_var,
            seasonal_var,
            cycle_var,
            obs_var,
            rho,
            lambda,
        };
        (params, penalty)
    }
}

fn logistic(u: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) / (1.0 + (-u).exp())
}

fn midpoint((lo, hi): (f64, f64)) -> f64 {
    0.5 * (lo + hi)
}

/// Maximum-likelihood fit followed by the smoothed decomposition at the
/// optimum.
///
/// Variances are searched on the log scale and `ρ`, `λc` through logistic
/// maps onto their bounds. One simplex is run from each start in
/// `opts.start_ratios`; the best end point wins, and the result is flagged
/// non-converged when that run hit the evaluation cap.
pub fn fit(
    obs: &ObservationSeries,
    spec: &StructuralSpec,
    opts: &FitOptions,
) -> Result<DecompositionResult> {
    spec.validate()?;
    if opts.start_ratios.is_empty() {
        return Err(Error::contract("at least one start ratio is required"));
    }
    let n_obs = obs.observed_count();
    if n_obs == 0 {
        return Err(Error::data("series is entirely missing"));
    }
    let scale = match obs.variance() {
        Some(v) if v > 0.0 => v,
        _ => 1.0,
    };
    let tf = Transform::new(spec, scale);
    if n_obs < tf.dim() {
        return Err(Error::data(format!(
            "{n_obs} observed values cannot identify {} parameters",
            tf.dim()
        )));
    }

    let objective = |x: &[f64]| {
        let (p, penalty) = tf.params(x);
        match assemble(spec, &p).and_then(|m| loglik(&m, obs)) {
            Ok(ll) => penalty - ll,
            Err(_) => f64::INFINITY,
        }
    };

    let mut best: Option<crate::optim::Minimum> = None;
    let mut evals = 0;
    for &ratio in &opts.start_ratios {
        let m = nelder_mead(objective, &tf.start(ratio), &opts.simplex);
        evals += m.evals;
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    if !best.value.is_finite() {
        return Err(Error::Numerical(
            "likelihood is not finite anywhere the search visited".into(),
        ));
    }
    let (params, _) = tf.params(&best.x);
    let mut d = decompose(obs, spec, &params)?;
    d.evals = evals;
    d.converged = best.converged;
    Ok(d)
}

/// `y − S − I`, trend plus observation error, with the original mask.
pub fn partial_residual(
    obs: &ObservationSeries,
    d: &DecompositionResult,
) -> Result<ObservationSeries> {
    if d.len() != obs.len() {
        return Err(Error::contract(format!(
            "decomposition has {} steps, series has {}",
            d.len(),
            obs.len()
        )));
    }
    obs.map_values(|t, y| y - d.seasonal[t] - d.cycle[t])
}

/// Partial residual with missing steps filled by the smoothed trend, as
/// required before subspace identification.
pub fn filled_partial_residual(
    obs: &ObservationSeries,
    d: &DecompositionResult,
) -> Result<Vec<f64>> {
    let pr = partial_residual(obs, d)?;
    Ok((0..obs.len())
        .map(|t| pr.get(t).unwrap_or(d.trend[t]))
        .collect())
}
