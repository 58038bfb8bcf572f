//! Fixed-interval state smoother with exact diffuse initialization.

use nalgebra::{DMatrix, DVector};

use super::filter::{FilterOutput, MIN_INNOVATION_VAR};
use super::model::GaussianStateSpace;
use crate::error::{Error, Result};

/// Diagonal entries of the δ information factor at or below this fraction
/// of the largest mark a diffuse direction the data do not pin down.
const IDENTIFIED: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

impl SmootherOutput {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Smoothed mean of state `i` at every step.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.mean.iter().map(|a| a[i]).collect()
    }

    /// Smoothed variance of state `i` at every step.
    pub fn component_var(&self, i: usize) -> Vec<f64> {
        self.cov.iter().map(|p| p[(i, i)]).collect()
    }
}

/// One forward step of the augmented pass.
enum Step {
    /// Missing observation, or one that is exact given the diffuse vector
    /// and so carries no information about the proper part.
    Skip,
    Update {
        v: f64,
        w: DVector<f64>,
        f: f64,
        pz: DVector<f64>,
    },
}

/// Fixed-interval smoother for the observations of a [`FilterOutput`]
/// produced by [`super::filter`] on the same model.
///
/// The initial state is written `a1 + Aδ + ξ` with `δ` the diffuse
/// coefficients. A forward pass filters the proper part given `δ`, carrying
/// the `δ`-loadings of every mean alongside; the `r`/`N` backward recursion
/// then gives the smoothed state as an affine function of `δ`, and `δ` is
/// integrated out against its flat-prior posterior. That posterior comes
/// from a QR factor of the stacked information rows rather than from the
/// κ-expansion, whose `1/F∞²` terms lose most of their digits when a diffuse
/// direction is only weakly identified.
pub fn smooth(model: &GaussianStateSpace, f: &FilterOutput) -> Result<SmootherOutput> {
    model.validate()?;
    let n = f.len();
    let m = model.dim();
    let lens = [
        f.predicted_mean.len(),
        f.predicted_cov.len(),
        f.predicted_diffuse.len(),
        f.filtered_mean.len(),
        f.filtered_cov.len(),
        f.innovations.len(),
        f.innovation_var.len(),
        f.diffuse_var.len(),
        f.observations.len(),
    ];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::contract("filter output has inconsistent lengths"));
    }
    if n == 0 {
        return Ok(SmootherOutput {
            mean: vec![],
            cov: vec![],
        });
    }
    if f.predicted_mean[0].len() != m {
        return Err(Error::contract(format!(
            "filter output has state dimension {}, model has {m}",
            f.predicted_mean[0].len()
        )));
    }

    let t_mat = &model.transition;
    let tt = t_mat.transpose();
    let z = &model.obs_row;
    let zz = z * z.transpose();
    let diffuse: Vec<usize> = (0..m).filter(|&i| model.diffuse[i]).collect();
    let q = diffuse.len();

    let mut a = model.init_mean.clone();
    let mut big_a = DMatrix::<f64>::zeros(m, q);
    for (k, &i) in diffuse.iter().enumerate() {
        big_a[(i, k)] = 1.0;
    }
    let mut p = model.init_cov.clone();
    let mut stored = Vec::with_capacity(n);
    let mut steps = Vec::with_capacity(n);
    // information rows [w/√F | v/√F] for δ
    let mut rows: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for t in 0..n {
        stored.push((a.clone(), big_a.clone(), p.clone()));
        let step = match f.observations[t] {
            None => Step::Skip,
            Some(y) => {
                let pz = &p * z;
                let fv = z.dot(&pz) + model.obs_var;
                let v = y - z.dot(&a);
                let w = big_a.tr_mul(z);
                if q > 0 {
                    let scale = fv.max(MIN_INNOVATION_VAR).sqrt();
                    rows.extend(w.iter().map(|x| x / scale));
                    targets.push(v / scale);
                }
                if fv <= MIN_INNOVATION_VAR {
                    Step::Skip
                } else {
                    let k = &pz / fv;
                    a.axpy(v, &k, 1.0);
                    big_a -= &k * w.transpose();
                    p -= &k * pz.transpose();
                    Step::Update { v, w, f: fv, pz }
                }
            }
        };
        steps.push(step);
        a = t_mat * &a;
        big_a = t_mat * &big_a;
        p = t_mat * &p * &tt + &model.state_cov;
        p = (&p + p.transpose()) * 0.5;
    }

    // flat-prior posterior of δ: mean R⁻¹Qᵀu, covariance R⁻¹R⁻ᵀ
    let (r_factor, delta) = if q > 0 {
        let count = targets.len();
        if count < q {
            return Err(Error::Data(format!(
                "{count} observations cannot identify {q} diffuse initial states"
            )));
        }
        let w = DMatrix::from_row_slice(count, q, &rows);
        let qr = w.qr();
        let r = qr.r();
        let top = r.diagonal().amax();
        if r.diagonal().iter().any(|d| d.abs() <= top * IDENTIFIED) {
            return Err(Error::Data(
                "the observations do not identify every diffuse initial state".into(),
            ));
        }
        let qtu = qr.q().tr_mul(&DVector::from_vec(targets));
        let delta = r
            .solve_upper_triangular(&qtu)
            .ok_or_else(|| Error::Numerical("singular diffuse information factor".into()))?;
        (Some(r), delta)
    } else {
        (None, DVector::zeros(0))
    };

    let mut r0 = DVector::<f64>::zeros(m);
    let mut rd = DMatrix::<f64>::zeros(m, q);
    let mut n0 = DMatrix::<f64>::zeros(m, m);
    let mut mean = vec![DVector::zeros(m); n];
    let mut cov = vec![DMatrix::zeros(m, m); n];
    for t in (0..n).rev() {
        match &steps[t] {
            Step::Skip => {
                r0 = &tt * &r0;
                rd = &tt * &rd;
                n0 = &tt * &n0 * t_mat;
            }
            Step::Update { v, w, f: fv, pz } => {
                let l = t_mat - (t_mat * pz / *fv) * z.transpose();
                let lt = l.transpose();
                r0 = z * (v / fv) + &lt * &r0;
                rd = (z * w.transpose()) / *fv + &lt * &rd;
                n0 = &zz / *fv + &lt * &n0 * &l;
            }
        }
        let (a, big_a, p) = &stored[t];
        let loads = big_a - p * &rd;
        let am = a + p * &r0 + &loads * &delta;
        let mut pm = p - p * &n0 * p;
        if let Some(r) = &r_factor {
            let x = r.tr_solve_upper_triangular(&loads.transpose()).ok_or_else(|| {
                Error::Numerical("singular diffuse information factor".into())
            })?;
            pm += x.tr_mul(&x);
        }
        if !am.iter().all(|v| v.is_finite()) {
            return Err(Error::Degenerate {
                step: t,
                detail: "non-finite smoothed state".into(),
            });
        }
        mean[t] = am;
        cov[t] = (&pm + pm.transpose()) * 0.5;
    }

    // Once the diffuse part is resolved the last smoothed state is the last
    // filtered state; reuse it so the two agree exactly.
    if f.filtered_diffuse[n - 1].is_none() {
        mean[n - 1] = f.filtered_mean[n - 1].clone();
        cov[n - 1] = f.filtered_cov[n - 1].clone();
    }
    Ok(SmootherOutput { mean, cov })
}
