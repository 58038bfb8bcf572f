//! Kalman filter with exact-diffuse initialization.
//!
//! Covariances of the diffuse period are carried as `P = P* + κ P∞` with
//! `κ → ∞`. While `F∞ = Z P∞ Zᵀ > 0` an observation is spent identifying
//! diffuse directions and contributes nothing to the log-likelihood; once
//! `P∞` vanishes the recursion is the ordinary one.

use nalgebra::{DMatrix, DVector};

use super::model::GaussianStateSpace;
use crate::error::{Error, Result};
use crate::series::ObservationSeries;

/// Innovation variances are floored here before inversion.
pub const MIN_INNOVATION_VAR: f64 = 1e-12;
/// `F∞` at or below this is treated as zero.
pub(crate) const DIFFUSE_TOL: f64 = 1e-8;
/// `P∞` is dropped once every entry is below this.
const DIFFUSE_EXIT_TOL: f64 = 1e-9;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How an individual step was processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// No observation: prediction only.
    Missing,
    /// Observation consumed by the diffuse initialization (`F∞ > 0`).
    Diffuse,
    /// Ordinary update with a proper predictive density.
    Regular,
}

/// Everything the filter produces, step by step.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub predicted_mean: Vec<DVector<f64>>,
    /// Finite part `P*` of the predicted covariance.
    pub predicted_cov: Vec<DMatrix<f64>>,
    /// Diffuse part `P∞` of the predicted covariance, while non-zero.
    pub predicted_diffuse: Vec<Option<DMatrix<f64>>>,
    pub filtered_mean: Vec<DVector<f64>>,
    pub filtered_cov: Vec<DMatrix<f64>>,
    pub filtered_diffuse: Vec<Option<DMatrix<f64>>>,
    /// `ν(t) = y(t) − Z a(t)`; `None` at missing steps.
    pub innovations: Vec<Option<f64>>,
    /// `F(t)` (the finite part `F*` at diffuse steps); `None` at missing steps.
    pub innovation_var: Vec<Option<f64>>,
    /// `F∞(t)` at diffuse steps.
    pub diffuse_var: Vec<Option<f64>>,
    pub kinds: Vec<StepKind>,
    pub loglik_terms: Vec<f64>,
    pub loglik: f64,
    /// The observations the filter ran on; `None` at missing steps.
    pub observations: Vec<Option<f64>>,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// Number of steps with a proper predictive density.
    pub fn effective_obs(&self) -> usize {
        self.kinds.iter().filter(|k| **k == StepKind::Regular).count()
    }

    /// Number of observations consumed by diffuse initialization.
    pub fn diffuse_steps(&self) -> usize {
        self.kinds.iter().filter(|k| **k == StepKind::Diffuse).count()
    }
}

/// Runs the filter and keeps the full per-step output.
pub fn filter(model: &GaussianStateSpace, obs: &ObservationSeries) -> Result<FilterOutput> {
    let mut sink = Store::new(model.dim(), obs.len());
    let ll = Recursion::new(model)?.run(obs, &mut sink)?;
    let mut out = sink.finish(ll);
    out.observations = (0..obs.len()).map(|t| obs.get(t)).collect();
    Ok(out)
}

/// Log-likelihood by prediction-error decomposition.
///
/// Sums the per-step Gaussian predictive log-densities of all
/// [`StepKind::Regular`] steps. This path stores nothing and is the one used
/// inside optimizers.
pub fn loglik(model: &GaussianStateSpace, obs: &ObservationSeries) -> Result<f64> {
    Recursion::new(model)?.run(obs, &mut NoStore)
}

/// Per-step observer of the recursion; flat row-major buffers.
trait Sink {
    fn predicted(&mut self, a: &[f64], p: &[f64], pinf: Option<&[f64]>);
    #[allow(clippy::too_many_arguments)]
    fn filtered(
        &mut self,
        a: &[f64],
        p: &[f64],
        pinf: Option<&[f64]>,
        kind: StepKind,
        v: Option<f64>,
        f: Option<f64>,
        finf: Option<f64>,
        ll: f64,
    );
}

struct NoStore;

impl Sink for NoStore {
    fn predicted(&mut self, _: &[f64], _: &[f64], _: Option<&[f64]>) {}
    fn filtered(
        &mut self,
        _: &[f64],
        _: &[f64],
        _: Option<&[f64]>,
        _: StepKind,
        _: Option<f64>,
        _: Option<f64>,
        _: Option<f64>,
        _: f64,
    ) {
    }
}

struct Store {
    m: usize,
    out: FilterOutput,
}

impl Store {
    fn new(m: usize, n: usize) -> Self {
        Self {
            m,
            out: FilterOutput {
                predicted_mean: Vec::with_capacity(n),
                predicted_cov: Vec::with_capacity(n),
                predicted_diffuse: Vec::with_capacity(n),
                filtered_mean: Vec::with_capacity(n),
                filtered_cov: Vec::with_capacity(n),
                filtered_diffuse: Vec::with_capacity(n),
                innovations: Vec::with_capacity(n),
                innovation_var: Vec::with_capacity(n),
                diffuse_var: Vec::with_capacity(n),
                kinds: Vec::with_capacity(n),
                loglik_terms: Vec::with_capacity(n),
                loglik: 0.0,
                observations: Vec::new(),
            },
        }
    }

    fn finish(mut self, ll: f64) -> FilterOutput {
        self.out.loglik = ll;
        self.out
    }

    fn mat(&self, p: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.m, p)
    }
}

impl Sink for Store {
    fn predicted(&mut self, a: &[f64], p: &[f64], pinf: Option<&[f64]>) {
        self.out.predicted_mean.push(DVector::from_column_slice(a));
        self.out.predicted_cov.push(self.mat(p));
        let d = pinf.map(|x| self.mat(x));
        self.out.predicted_diffuse.push(d);
    }

    fn filtered(
        &mut self,
        a: &[f64],
        p: &[f64],
        pinf: Option<&[f64]>,
        kind: StepKind,
        v: Option<f64>,
        f: Option<f64>,
        finf: Option<f64>,
        ll: f64,
    ) {
        self.out.filtered_mean.push(DVector::from_column_slice(a));
        self.out.filtered_cov.push(self.mat(p));
        let d = pinf.map(|x| self.mat(x));
        self.out.filtered_diffuse.push(d);
        self.out.kinds.push(kind);
        self.out.innovations.push(v);
        self.out.innovation_var.push(f);
        self.out.diffuse_var.push(finf);
        self.out.loglik_terms.push(ll);
    }
}

/// Sparse view of the system matrices plus work buffers.
struct Recursion<'a> {
    model: &'a GaussianStateSpace,
    m: usize,
    t_nz: Vec<(usize, usize, f64)>,
    z_nz: Vec<(usize, f64)>,
    q_nz: Vec<(usize, usize, f64)>,
}

impl<'a> Recursion<'a> {
    fn new(model: &'a GaussianStateSpace) -> Result<Self> {
        model.validate()?;
        let m = model.dim();
        let mut t_nz = Vec::new();
        let mut q_nz = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let t = model.transition[(i, j)];
                if t != 0.0 {
                    t_nz.push((i, j, t));
                }
                let q = model.state_cov[(i, j)];
                if q != 0.0 {
                    q_nz.push((i, j, q));
                }
            }
        }
        let z_nz = model
            .obs_row
            .iter()
            .enumerate()
            .filter(|(_, z)| **z != 0.0)
            .map(|(j, z)| (j, *z))
            .collect();
        Ok(Self {
            model,
            m,
            t_nz,
            z_nz,
            q_nz,
        })
    }

    fn run(&self, obs: &ObservationSeries, sink: &mut impl Sink) -> Result<f64> {
        let m = self.m;
        let model = self.model;
        let mut a: Vec<f64> = model.init_mean.iter().cloned().collect();
        let mut p = vec![0.0; m * m];
        let mut pinf = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                p[i * m + j] = model.init_cov[(i, j)];
            }
            if model.diffuse[i] {
                pinf[i * m + i] = 1.0;
            }
        }
        let mut diffuse = model.diffuse.iter().any(|d| *d);
        let mut mst = vec![0.0; m];
        let mut minf = vec![0.0; m];
        let mut tmp = vec![0.0; m * m];
        let mut a_next = vec![0.0; m];
        let mut total = 0.0;

        for t in 0..obs.len() {
            sink.predicted(&a, &p, diffuse.then_some(&pinf[..]));
            let (kind, v, f, finf, ll) = match obs.get(t) {
                None => (StepKind::Missing, None, None, None, 0.0),
                Some(y) => {
                    let v = y - self.z_dot(&a);
                    self.mat_z(&p, &mut mst);
                    let fst = self.z_dot(&mst) + model.obs_var;
                    let finf = if diffuse {
                        self.mat_z(&pinf, &mut minf);
                        self.z_dot(&minf)
                    } else {
                        0.0
                    };
                    if !v.is_finite() || !fst.is_finite() || !finf.is_finite() {
                        return Err(Error::Degenerate {
                            step: t,
                            detail: format!("non-finite innovation (v={v}, F={fst})"),
                        });
                    }
                    if finf > DIFFUSE_TOL {
                        for i in 0..m {
                            a[i] += minf[i] * v / finf;
                        }
                        let c = fst / (finf * finf);
                        for i in 0..m {
                            for j in 0..m {
                                let k = i * m + j;
                                p[k] += minf[i] * minf[j] * c
                                    - (mst[i] * minf[j] + minf[i] * mst[j]) / finf;
                                pinf[k] -= minf[i] * minf[j] / finf;
                            }
                        }
                        symmetrize(&mut pinf, m);
                        (StepKind::Diffuse, Some(v), Some(fst), Some(finf), 0.0)
                    } else {
                        let f = fst.max(MIN_INNOVATION_VAR);
                        for i in 0..m {
                            a[i] += mst[i] * v / f;
                        }
                        for i in 0..m {
                            for j in 0..m {
                                p[i * m + j] -= mst[i] * mst[j] / f;
                            }
                        }
                        let ll = -0.5 * (LN_2PI + f.ln() + v * v / f);
                        (StepKind::Regular, Some(v), Some(f), None, ll)
                    }
                }
            };
            symmetrize(&mut p, m);
            total += ll;
            sink.filtered(&a, &p, diffuse.then_some(&pinf[..]), kind, v, f, finf, ll);

            // predict
            a_next.iter_mut().for_each(|x| *x = 0.0);
            for &(i, j, tv) in &self.t_nz {
                a_next[i] += tv * a[j];
            }
            std::mem::swap(&mut a, &mut a_next);
            self.sandwich(&mut p, &mut tmp);
            for &(i, j, q) in &self.q_nz {
                p[i * m + j] += q;
            }
            symmetrize(&mut p, m);
            if diffuse {
                self.sandwich(&mut pinf, &mut tmp);
                if pinf.iter().all(|x| x.abs() < DIFFUSE_EXIT_TOL) {
                    pinf.iter_mut().for_each(|x| *x = 0.0);
                    diffuse = false;
                }
            }
        }
        Ok(total)
    }

    fn z_dot(&self, x: &[f64]) -> f64 {
        self.z_nz.iter().map(|&(j, z)| z * x[j]).sum()
    }

    /// `out = P Zᵀ` for symmetric `P`.
    fn mat_z(&self, p: &[f64], out: &mut [f64]) {
        let m = self.m;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.z_nz.iter().map(|&(j, z)| p[i * m + j] * z).sum();
        }
    }

    /// `p ← T p Tᵀ` using the sparse transition.
    fn sandwich(&self, p: &mut [f64], tmp: &mut [f64]) {
        let m = self.m;
        tmp.iter_mut().for_each(|x| *x = 0.0);
        for &(i, k, tv) in &self.t_nz {
            let (src, dst) = (&p[k * m..(k + 1) * m], &mut tmp[i * m..(i + 1) * m]);
            for c in 0..m {
                dst[c] += tv * src[c];
            }
        }
        p.iter_mut().for_each(|x| *x = 0.0);
        for &(j, k, tv) in &self.t_nz {
            for r in 0..m {
                p[r * m + j] += tmp[r * m + k] * tv;
            }
        }
    }
}

fn symmetrize(p: &mut [f64], m: usize) {
    for i in 0..m {
        for j in 0..i {
            let s = 0.5 * (p[i * m + j] + p[j * m + i]);
            p[i * m + j] = s;
            p[j * m + i] = s;
        }
    }
}
