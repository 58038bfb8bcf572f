use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use super::Hankel;
use crate::error::{Error, Result};

/// Largest accepted `σ1/σn` among the retained singular values.
const MAX_CONDITION: f64 = 1e12;
/// Modulus that unstable eigenvalues are pulled back to.
const PROJECTED_MODULUS: f64 = 1.0 - 1e-8;
const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITER: usize = 10_000;
/// Steps below this (relative) are rounding noise.
const ROUNDING_FLOOR: f64 = 1e-15;
/// Innovation covariances closer than this to singular are refused.
const DEFINITE_MARGIN: f64 = 1e-6;
/// First ridge tried on `Λ0`, relative to its mean diagonal.
const RIDGE_START: f64 = 1e-10;
const RIDGE_ATTEMPTS: usize = 8;

/// Innovation-form system identified from a Hankel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationModel {
    pub n: usize,
    /// `n × n` transition.
    pub a: DMatrix<f64>,
    /// `N × n` loadings.
    pub c: DMatrix<f64>,
    /// `n × N` innovation gain.
    pub k: DMatrix<f64>,
    /// `n × N` reachability block, `Cov(x(t+1), y(t))`.
    pub m: DMatrix<f64>,
    pub lambda0: DMatrix<f64>,
    /// State covariance `Π` from the Riccati fixed point.
    pub pi: DMatrix<f64>,
    /// Innovation covariance `Λ0 − C Π Cᵀ` (with any ridge applied).
    pub innovation_cov: DMatrix<f64>,
    /// Full Hankel spectrum, descending.
    pub singular_values: Vec<f64>,
    /// Eigenvalue projections, regularization and non-convergence notes.
    pub events: Vec<String>,
    /// Series means the model's covariances were taken about; subtracted
    /// from the data before the innovation recursion.
    pub means: Vec<f64>,
}

impl RealizationModel {
    pub fn n_series(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// Model covariance `Λk = C A^(k−1) M` for `k ≥ 1`, `Λ0` for `k = 0`.
    pub fn covariance(&self, k: usize) -> DMatrix<f64> {
        if k == 0 {
            return self.lambda0.clone();
        }
        let mut x = self.m.clone();
        for _ in 1..k {
            x = &self.a * x;
        }
        &self.c * x
    }
}

pub(crate) fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Minimal realization of rank `n` from the Hankel pair.
///
/// With `H = U Σ Vᵀ` truncated to `n`: `O = U Σ^½`, `R = Σ^½ Vᵀ`, `C` is the
/// first block row of `O`, `M` the first block column of `R`, and
/// `A = Σ^-½ Uᵀ H⁺ V Σ^-½`. Eigenvalues of `A` outside the unit circle are
/// pulled radially inside it; `K` comes from [`solve_riccati`].
pub fn realize(hankel: &Hankel, n: usize) -> Result<RealizationModel> {
    let big_n = hankel.n_series();
    let (rows, cols) = hankel.h.shape();
    if n == 0 || n > rows.min(cols) {
        return Err(Error::contract(format!(
            "state dimension {n} must lie in 1..={}",
            rows.min(cols)
        )));
    }
    if hankel.h.iter().chain(hankel.shifted.iter()).any(|v| !v.is_finite()) {
        return Err(Error::data("Hankel matrix has non-finite entries"));
    }
    let svd = hankel.h.clone().svd(true, true);
    let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    let s1 = singular_values[0];
    let sn = singular_values[n - 1];
    if !(sn > 0.0) || s1 / sn > MAX_CONDITION {
        return Err(Error::Numerical(format!(
            "retained singular values are ill-conditioned (σ1 = {s1:e}, σ{n} = {sn:e}); \
             use a smaller state dimension"
        )));
    }
    let u = svd.u.as_ref().expect("u requested").columns(0, n).into_owned();
    let vt = svd.v_t.as_ref().expect("v requested").rows(0, n).into_owned();
    let half = DVector::from_iterator(n, singular_values[..n].iter().map(|s| s.sqrt()));
    let inv_half = half.map(|s| 1.0 / s);

    let obs = scale_columns(&u, &half);
    let reach = scale_rows(&vt, &half);
    let c = obs.rows(0, big_n).into_owned();
    let m = reach.columns(0, big_n).into_owned();
    let inner = u.transpose() * &hankel.shifted * vt.transpose();
    let mut a = scale_columns(&scale_rows(&inner, &inv_half), &inv_half);

    let mut events = Vec::new();
    if let Some(note) = project_unstable(&mut a) {
        events.push(note);
    }
    let lambda0 = hankel.lambda0().clone();
    let sol = solve_riccati(&a, &c, &m, &lambda0)?;
    events.extend(sol.events.iter().cloned());
    Ok(RealizationModel {
        n,
        a,
        c,
        k: sol.k,
        m,
        lambda0,
        pi: sol.pi,
        innovation_cov: sol.innovation_cov,
        singular_values,
        events,
        means: hankel.means.clone(),
    })
}

fn scale_columns(x: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= s[j];
    }
    out
}

fn scale_rows(x: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= s[i];
    }
    out
}

/// Scales the real-Schur diagonal blocks whose eigenvalues lie outside the
/// unit circle; returns a note when anything changed.
fn project_unstable(a: &mut DMatrix<f64>) -> Option<String> {
    let n = a.nrows();
    let (q, mut t) = Schur::new(a.clone()).unpack();
    let mut moved = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            let (p, r, s, u) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let tr = p + u;
            let det = p * u - r * s;
            let disc = tr * tr / 4.0 - det;
            let modulus = if disc < 0.0 {
                det.sqrt()
            } else {
                (tr / 2.0).abs() + disc.sqrt()
            };
            if modulus > 1.0 {
                let f = PROJECTED_MODULUS / modulus;
                let mut block = t.view_mut((i, i), (2, 2));
                block *= f;
                moved.push(modulus);
            }
            i += 2;
        } else {
            let v = t[(i, i)];
            if v.abs() > 1.0 {
                t[(i, i)] = v.signum() * PROJECTED_MODULUS;
                moved.push(v.abs());
            }
            i += 1;
        }
    }
    if moved.is_empty() {
        return None;
    }
    *a = &q * t * q.transpose();
    let list: Vec<String> = moved.iter().map(|m| format!("{m:.6}")).collect();
    Some(format!(
        "projected {} unstable eigenvalue(s) with modulus [{}] to {PROJECTED_MODULUS}",
        moved.len(),
        list.join(", ")
    ))
}

/// Fixed point of the covariance Riccati recursion and its gain.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub k: DMatrix<f64>,
    pub pi: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The iteration stopped early to keep the innovation covariance
    /// positive definite.
    pub truncated: bool,
    /// Ridge added to the diagonal of `Λ0` (0 when none was needed).
    pub ridge: f64,
    pub events: Vec<String>,
}

/// Iterates
/// `Π ← AΠAᵀ + (M − AΠCᵀ)(Λ0 − CΠCᵀ)⁻¹(M − AΠCᵀ)ᵀ` from `Π = 0` and
/// returns `K = (M − AΠCᵀ)(Λ0 − CΠCᵀ)⁻¹` at the fixed point.
///
/// If an iterate would make `Λ0 − CΠCᵀ` indefinite (sample covariances
/// that are not positive real), the last definite iterate is kept and the
/// solution is flagged as truncated.
///
/// The `N × N` inverse is never formed per iteration: with `Λ0⁻¹` computed
/// once, the Woodbury identity reduces every step to `n × n` algebra. When
/// `Λ0` is singular, or the innovation covariance would lose definiteness, a
/// growing ridge is added to `Λ0` and reported.
pub fn solve_riccati(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    m: &DMatrix<f64>,
    lambda0: &DMatrix<f64>,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    let big_n = c.nrows();
    if a.ncols() != n
        || c.ncols() != n
        || m.shape() != (n, big_n)
        || lambda0.shape() != (big_n, big_n)
    {
        return Err(Error::contract(format!(
            "inconsistent shapes: A {:?}, C {:?}, M {:?}, Λ0 {:?}",
            a.shape(),
            c.shape(),
            m.shape(),
            lambda0.shape()
        )));
    }
    let sym = (lambda0 + lambda0.transpose()) * 0.5;
    let scale = (sym.diagonal().iter().map(|v| v.abs()).sum::<f64>() / big_n as f64)
        .max(f64::MIN_POSITIVE);
    let mut last_err = String::new();
    for attempt in 0..=RIDGE_ATTEMPTS {
        let ridge = if attempt == 0 {
            0.0
        } else {
            RIDGE_START * scale * 10f64.powi(attempt as i32 - 1)
        };
        let mut l0 = sym.clone();
        for i in 0..big_n {
            l0[(i, i)] += ridge;
        }
        let Some(chol) = l0.clone().cholesky() else {
            last_err = format!("Λ0 not positive definite with ridge {ridge:e}");
            continue;
        };
        let it = match iterate(a, c, m, &chol.inverse()) {
            Ok(it) => it,
            Err(e) => {
                last_err = e;
                continue;
            }
        };
        let innovation_cov = &l0 - c * &it.pi * c.transpose();
        let innovation_cov = (&innovation_cov + innovation_cov.transpose()) * 0.5;
        let mut events = Vec::new();
        if ridge > 0.0 {
            events.push(format!("added ridge {ridge:e} to the diagonal of Λ0"));
        }
        if it.truncated {
            events.push(format!(
                "Riccati iteration truncated after {} steps: the next iterate would make \
                 the innovation covariance indefinite (covariances not positive real)",
                it.iterations
            ));
        } else if !it.converged {
            events.push(format!(
                "Riccati iteration stopped after {} steps (last max change {:.3e})",
                it.iterations, it.last_change
            ));
        }
        return Ok(RiccatiSolution {
            k: it.k,
            pi: it.pi,
            innovation_cov,
            iterations: it.iterations,
            converged: it.converged,
            truncated: it.truncated,
            ridge,
            events,
        });
    }
    Err(Error::Numerical(format!(
        "Riccati recursion failed after regularization: {last_err}"
    )))
}

struct Iterated {
    k: DMatrix<f64>,
    pi: DMatrix<f64>,
    iterations: usize,
    converged: bool,
    truncated: bool,
    last_change: f64,
}

/// Largest eigenvalue of `G^½ Π G^½`; `Λ0 − CΠCᵀ ≻ 0` exactly when it is
/// below 1.
fn definiteness_ratio(g_half: &DMatrix<f64>, pi: &DMatrix<f64>) -> f64 {
    let inner = g_half * pi * g_half;
    SymmetricEigen::new((&inner + inner.transpose()) * 0.5)
        .eigenvalues
        .max()
}

fn iterate(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    m: &DMatrix<f64>,
    l_inv: &DMatrix<f64>,
) -> std::result::Result<Iterated, String> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let ct_li = c.transpose() * l_inv; // n × N
    let m_li = m * l_inv; // n × N
    let g = &ct_li * c;
    let g = (&g + g.transpose()) * 0.5;
    let hh = &ct_li * m.transpose();
    let j = &m_li * m.transpose();
    let j = (&j + j.transpose()) * 0.5;
    let g_half = sym_sqrt(&g);

    // (I − GΠ)⁻¹ X, failing when I − GΠ is singular
    let solve = |pi: &DMatrix<f64>, x: &DMatrix<f64>| {
        (&eye - &g * pi)
            .lu()
            .solve(x)
            .ok_or_else(|| "innovation covariance became singular".to_string())
    };

    let mut pi = DMatrix::<f64>::zeros(n, n);
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut truncated = false;
    while iterations < RICCATI_MAX_ITER {
        let ap = a * &pi;
        let e = hh.transpose() - &ap * &g;
        let x = solve(&pi, &e.transpose())?;
        let mut next = &ap * a.transpose() + &j - &ap * &hh - hh.transpose() * ap.transpose()
            + &ap * &g * ap.transpose()
            + &e * &pi * x;
        next = (&next + next.transpose()) * 0.5;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite Π at iteration {}", iterations + 1));
        }
        // Sample covariances need not be positive real; the iterate after
        // `k` steps is the exact predictor from `k` lags, so keep the last
        // one whose innovation covariance is still definite.
        if definiteness_ratio(&g_half, &next) >= 1.0 - DEFINITE_MARGIN {
            truncated = true;
            break;
        }
        iterations += 1;
        let prev = change;
        change = (&next - &pi).amax();
        let scale = next.amax().max(1.0);
        pi = next;
        // Remaining distance to the fixed point is at most change/(1 − rate)
        // for a contraction; stop once that, not just the step, is small.
        let rate = change / prev;
        let remaining = if rate < 1.0 { change / (1.0 - rate) } else { f64::INFINITY };
        if change < ROUNDING_FLOOR * scale
            || (change < RICCATI_TOL * scale && remaining < 0.1 * RICCATI_TOL * scale)
        {
            converged = true;
            break;
        }
    }
    let ap = a * &pi;
    let e = hh.transpose() - &ap * &g;
    let x = solve(&pi, &ct_li)?;
    let k = &m_li - &ap * &ct_li + &e * &pi * x;
    Ok(Iterated {
        k,
        pi,
        iterations,
        converged,
        truncated,
        last_change: change,
    })
}

fn sym_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}
