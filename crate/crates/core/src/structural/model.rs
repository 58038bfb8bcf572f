use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ssm::GaussianStateSpace;

/// How the cycle's damping and frequency are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CycleMode {
    /// ρ and λc are estimated with the variances.
    Estimate,
    /// ρ and λc are held at the given values.
    Fixed { rho: f64, lambda: f64 },
}

/// Which components the structural model contains and how its cycle
/// parameters are constrained.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralSpec {
    /// Order `k` of the trend difference `∇ᵏT(t) ~ N(0, σT²)`.
    pub trend_order: usize,
    /// Steps per year `s`; the seasonal running sum spans `s` steps.
    pub season_length: usize,
    pub seasonal: bool,
    pub cycle: bool,
    pub cycle_mode: CycleMode,
    /// Open interval for the damping factor ρ.
    pub rho_bounds: (f64, f64),
    /// Interval for the cycle frequency λc in radians per step.
    pub lambda_bounds: (f64, f64),
}

impl Default for StructuralSpec {
    fn default() -> Self {
        Self {
            trend_order: 1,
            season_length: 12,
            seasonal: true,
            cycle: true,
            cycle_mode: CycleMode::Estimate,
            rho_bounds: (0.05, 0.995),
            // cycles between 1.5 and 10 years of monthly data
            lambda_bounds: (2.0 * PI / 120.0, 2.0 * PI / 18.0),
        }
    }
}

/// Positions of each component's leading state in the assembled vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub trend: usize,
    pub seasonal: Option<usize>,
    pub cycle: Option<usize>,
    pub dim: usize,
}

impl StructuralSpec {
    /// Trend-only spec (local level for `k = 1`).
    pub fn trend_only(trend_order: usize) -> Self {
        Self {
            trend_order,
            seasonal: false,
            cycle: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trend_order < 1 {
            return Err(Error::contract("trend order must be at least 1"));
        }
        if self.season_length < 2 {
            return Err(Error::contract("season length must be at least 2"));
        }
        let (lo, hi) = self.rho_bounds;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::contract(format!(
                "rho bounds must satisfy 0 < min < max < 1, got ({lo}, {hi})"
            )));
        }
        let (lo, hi) = self.lambda_bounds;
        if !(0.0 < lo && lo < hi && hi <= PI) {
            return Err(Error::contract(format!(
                "lambda bounds must satisfy 0 < min < max <= pi, got ({lo}, {hi})"
            )));
        }
        if let CycleMode::Fixed { rho, lambda } = self.cycle_mode {
            self.check_cycle(rho, lambda)?;
        }
        Ok(())
    }

    fn check_cycle(&self, rho: f64, lambda: f64) -> Result<()> {
        let (rlo, rhi) = self.rho_bounds;
        let (llo, lhi) = self.lambda_bounds;
        if !(rlo..=rhi).contains(&rho) {
            return Err(Error::contract(format!(
                "rho {rho} outside bounds ({rlo}, {rhi})"
            )));
        }
        if !(llo..=lhi).contains(&lambda) {
            return Err(Error::contract(format!(
                "lambda {lambda} outside bounds ({llo}, {lhi})"
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> StateLayout {
        let mut dim = self.trend_order;
        let seasonal = self.seasonal.then(|| {
            let at = dim;
            dim += self.season_length - 1;
            at
        });
        let cycle = self.cycle.then(|| {
            let at = dim;
            dim += 2;
            at
        });
        StateLayout {
            trend: 0,
            seasonal,
            cycle,
            dim,
        }
    }
}

/// Variances and cycle parameters of the structural model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralParams {
    pub trend_var: f64,
    pub seasonal_var: f64,
    pub cycle_var: f64,
    pub obs_var: f64,
    pub rho: f64,
    pub lambda: f64,
}

impl StructuralParams {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("trend_var", self.trend_var),
            ("seasonal_var", self.seasonal_var),
            ("cycle_var", self.cycle_var),
            ("obs_var", self.obs_var),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::contract(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the block-diagonal state-space form.
///
/// Blocks, in order: a `k`-state integrated trend (diffuse), an `s − 1`
/// state dummy seasonal whose `s`-step running sum is the seasonal shock
/// (diffuse), and the two-state damped rotation cycle with stationary prior
/// `σκ²/(1 − ρ²)·I`. The observation row picks the trend level, the current
/// seasonal and `ψ(t)`.
pub fn assemble(spec: &StructuralSpec, params: &StructuralParams) -> Result<GaussianStateSpace> {
    spec.validate()?;
    params.validate()?;
    if spec.cycle {
        spec.check_cycle(params.rho, params.lambda)?;
    }
    let layout = spec.layout();
    let m = layout.dim;
    let mut t = DMatrix::zeros(m, m);
    let mut q = DMatrix::zeros(m, m);
    let mut z = DVector::zeros(m);
    let mut p1 = DMatrix::zeros(m, m);
    let mut diffuse = vec![false; m];

    let k = spec.trend_order;
    // T(t) = Σ_{i=1..k} (−1)^{i+1} C(k,i) T(t−i) + η
    let mut binom = 1.0;
    for i in 1..=k {
        binom = binom * (k + 1 - i) as f64 / i as f64;
        let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
        t[(0, i - 1)] = sign * binom;
    }
    for i in 1..k {
        t[(i, i - 1)] = 1.0;
    }
    q[(0, 0)] = params.trend_var;
    z[0] = 1.0;
    diffuse[..k].iter_mut().for_each(|d| *d = true);

    if let Some(at) = layout.seasonal {
        let n = spec.season_length - 1;
        for j in 0..n {
            t[(at, at + j)] = -1.0;
        }
        for i in 1..n {
            t[(at + i, at + i - 1)] = 1.0;
        }
        q[(at, at)] = params.seasonal_var;
        z[at] = 1.0;
        diffuse[at..at + n].iter_mut().for_each(|d| *d = true);
    }

    if let Some(at) = layout.cycle {
        let (s, c) = params.lambda.sin_cos();
        let rho = params.rho;
        t[(at, at)] = rho * c;
        t[(at, at + 1)] = rho * s;
        t[(at + 1, at)] = -rho * s;
        t[(at + 1, at + 1)] = rho * c;
        q[(at, at)] = params.cycle_var;
        q[(at + 1, at + 1)] = params.cycle_var;
        let stationary = params.cycle_var / (1.0 - rho * rho);
        p1[(at, at)] = stationary;
        p1[(at + 1, at + 1)] = stationary;
        z[at] = 1.0;
    }

    GaussianStateSpace::new(
        t,
        z,
        q,
        params.obs_var,
        DVector::zeros(m),
        p1,
        diffuse,
    )
}
