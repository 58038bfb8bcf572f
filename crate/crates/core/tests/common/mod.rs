//! Test-only reference implementations.
//!
//! The dense oracle writes every state and observation as an affine function
//! of independent standard normals plus the diffuse coefficients, assembles
//! the joint Gaussian explicitly, and conditions by direct linear algebra.
//! It shares no code with the recursive filter.
#![allow(dead_code)]

use commontrends::ssm::GaussianStateSpace;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Joint {
    pub m: usize,
    pub tau: usize,
    /// Stacked state means (t-major) and observation means.
    pub mu_x: DVector<f64>,
    pub mu_y: DVector<f64>,
    /// Loadings on the independent normals.
    pub s_x: DMatrix<f64>,
    pub s_y: DMatrix<f64>,
    /// Loadings on the diffuse coefficients.
    pub g_x: DMatrix<f64>,
    pub g_y: DMatrix<f64>,
}

fn factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let mut l = eig.eigenvectors.clone();
    for (j, &v) in eig.eigenvalues.iter().enumerate() {
        l.column_mut(j).scale_mut(v.max(0.0).sqrt());
    }
    l
}

impl Joint {
    pub fn build(model: &GaussianStateSpace, tau: usize) -> Self {
        let m = model.dim();
        let diffuse: Vec<usize> = (0..m).filter(|&i| model.diffuse[i]).collect();
        let q = diffuse.len();
        let nu = m * tau + tau; // init + (tau-1) state shocks + tau obs shocks
        let l1 = factor(&model.init_cov);
        let lq = factor(&model.state_cov);
        let t = &model.transition;

        let mut mu_x = DVector::zeros(m * tau);
        let mut s_x = DMatrix::zeros(m * tau, nu);
        let mut g_x = DMatrix::zeros(m * tau, q);

        let mut mu = model.init_mean.clone();
        let mut s = DMatrix::zeros(m, nu);
        s.view_mut((0, 0), (m, m)).copy_from(&l1);
        let mut g = DMatrix::zeros(m, q);
        for (k, &i) in diffuse.iter().enumerate() {
            g[(i, k)] = 1.0;
        }
        for step in 0..tau {
            mu_x.rows_mut(step * m, m).copy_from(&mu);
            s_x.view_mut((step * m, 0), (m, nu)).copy_from(&s);
            g_x.view_mut((step * m, 0), (m, q)).copy_from(&g);
            mu = t * &mu;
            s = t * &s;
            if step + 1 < tau {
                let col = m * (step + 1);
                let mut block = s.view_mut((0, col), (m, m));
                block += &lq;
            }
            g = t * &g;
        }

        let z = model.obs_row.transpose();
        let h_sd = model.obs_var.sqrt();
        let mut mu_y = DVector::zeros(tau);
        let mut s_y = DMatrix::zeros(tau, nu);
        let mut g_y = DMatrix::zeros(tau, q);
        for step in 0..tau {
            let rows = step * m..step * m + m;
            mu_y[step] = (&z * mu_x.rows(rows.start, m))[0];
            s_y.row_mut(step)
                .copy_from(&(&z * s_x.rows(rows.start, m)));
            g_y.row_mut(step)
                .copy_from(&(&z * g_x.rows(rows.start, m)));
            s_y[(step, m * tau + step)] += h_sd;
        }
        Self {
            m,
            tau,
            mu_x,
            mu_y,
            s_x,
            s_y,
            g_x,
            g_y,
        }
    }

    /// Posterior mean and covariance of the state at `step` given the
    /// observations at indices `observed` (values `y`).
    ///
    /// Each observation's own noise is solved out, leaving a whitened least
    /// squares problem in the state normals and the diffuse coefficients
    /// (the latter with no prior term). The posterior is read off an SVD of
    /// the design, which keeps the conditioning of the design itself rather
    /// than its square.
    pub fn condition(
        &self,
        step: usize,
        observed: &[usize],
        y: &[f64],
    ) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.m;
        let ns = m * self.tau; // normals the states load on
        let q = self.g_y.ncols();
        let k = observed.len();
        let mut design = DMatrix::zeros(ns + k, ns + q);
        let mut target = DVector::zeros(ns + k);
        design.view_mut((0, 0), (ns, ns)).fill_with_identity();
        for (r, &i) in observed.iter().enumerate() {
            let h = self.s_y[(i, ns + i)];
            assert!(h > 0.0, "oracle needs observation noise");
            for j in 0..ns {
                design[(ns + r, j)] = self.s_y[(i, j)] / h;
            }
            for j in 0..q {
                design[(ns + r, ns + j)] = self.g_y[(i, j)] / h;
            }
            target[ns + r] = (y[i] - self.mu_y[i]) / h;
        }
        let svd = design.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let sigma = svd.singular_values;
        assert!(sigma.min() > 1e-300, "diffuse part not identified");
        let inv = DMatrix::from_diagonal(&sigma.map(|s| 1.0 / s));
        let theta = v_t.transpose() * &inv * (u.transpose() * target);
        let mut loads = DMatrix::zeros(m, ns + q);
        loads
            .view_mut((0, 0), (m, ns))
            .copy_from(&self.s_x.view((step * m, 0), (m, ns)));
        loads
            .view_mut((0, ns), (m, q))
            .copy_from(&self.g_x.rows(step * m, m));
        let mean = self.mu_x.rows(step * m, m) + &loads * theta;
        let c = loads * v_t.transpose() * inv;
        let cov = &c * c.transpose();
        (mean, cov)
    }

    /// Log density of the observed values (proper priors only).
    pub fn log_density(&self, observed: &[usize], y: &[f64]) -> f64 {
        let k = observed.len();
        let mut so = DMatrix::zeros(k, self.s_y.ncols());
        let mut resid = DVector::zeros(k);
        for (r, &i) in observed.iter().enumerate() {
            so.row_mut(r).copy_from(&self.s_y.row(i));
            resid[r] = y[i] - self.mu_y[i];
        }
        let cov = &so * so.transpose();
        let chol = cov.cholesky().expect("covariance not positive definite");
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let sol = chol.solve(&resid);
        -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + resid.dot(&sol))
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// A random stable model with `m ≤ 3`; `with_diffuse` flags a random
/// non-empty subset of states as diffuse.
pub fn random_model(rng: &mut ChaCha8Rng, with_diffuse: bool) -> GaussianStateSpace {
    let m = rng.random_range(1..=3);
    let mut t = normal_matrix(rng, m, m);
    let radius = t
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    let target = rng.random_range(0.3..0.97);
    if radius > 0.0 {
        t *= target / radius;
    }
    let b = normal_matrix(rng, m, m) * 0.7;
    let q = &b * b.transpose();
    let z = DVector::from_fn(m, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v + v.signum() * 0.3
    });
    let h = rng.random_range(0.1..1.5);
    let a1 = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
    let c = normal_matrix(rng, m, m);
    let mut p1 = &c * c.transpose();
    let mut diffuse = vec![false; m];
    if with_diffuse {
        let k = rng.random_range(1..=m);
        for d in diffuse.iter_mut().take(k) {
            *d = true;
        }
        for i in 0..m {
            for j in 0..m {
                if diffuse[i] || diffuse[j] {
                    p1[(i, j)] = 0.0;
                }
            }
        }
    }
    GaussianStateSpace::new(t, z, q, h, a1, p1, diffuse).expect("valid random model")
}

/// Random observations with a few missing values (never the first).
pub fn random_obs(rng: &mut ChaCha8Rng, tau: usize, missing_rate: f64) -> Vec<f64> {
    (0..tau)
        .map(|t| {
            if t > 0 && rng.random_bool(missing_rate) {
                f64::NAN
            } else {
                let z: f64 = StandardNormal.sample(rng);
                2.0 * z
            }
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Simulates the structural model with level 10 and a sinusoidal initial
/// seasonal pattern of the given amplitude. Returns the series and the
/// `τ × m` state matrix.
pub fn simulate_structural(
    spec: &commontrends::structural::StructuralSpec,
    params: &commontrends::structural::StructuralParams,
    tau: usize,
    seed: u64,
    season_amplitude: f64,
) -> (commontrends::ObservationSeries, DMatrix<f64>) {
    let model = commontrends::structural::assemble(spec, params).unwrap();
    let mut init = vec![10.0; spec.trend_order];
    if spec.seasonal {
        let s = spec.season_length as f64;
        init.extend(
            (0..spec.season_length - 1)
                .map(|j| season_amplitude * (2.0 * std::f64::consts::PI * j as f64 / s).sin()),
        );
    }
    commontrends::ssm::simulate(&model, tau, seed, Some(&init)).unwrap()
}

/// Innovation-form system with its exact stationary covariances.
pub struct InnovationSystem {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Stationary state covariance `P = APAᵀ + KΣKᵀ`.
    pub p: DMatrix<f64>,
}

impl InnovationSystem {
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, k: DMatrix<f64>, sigma: DMatrix<f64>) -> Self {
        let q = &k * &sigma * k.transpose();
        let mut p = q.clone();
        for _ in 0..100_000 {
            let next = &a * &p * a.transpose() + &q;
            let done = (&next - &p).amax() < 1e-15 * (1.0 + p.amax());
            p = next;
            if done {
                break;
            }
        }
        Self { a, c, k, sigma, p }
    }

    /// `Cov(x(t+1), y(t))`.
    pub fn m(&self) -> DMatrix<f64> {
        &self.a * &self.p * self.c.transpose() + &self.k * &self.sigma
    }

    pub fn lambda(&self, k: usize) -> DMatrix<f64> {
        if k == 0 {
            return &self.c * &self.p * self.c.transpose() + &self.sigma;
        }
        let mut x = self.m();
        for _ in 1..k {
            x = &self.a * x;
        }
        &self.c * x
    }
}

/// Residual of the covariance Riccati equation evaluated with a dense
/// inverse of the innovation covariance.
pub fn riccati_residual(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    m: &DMatrix<f64>,
    lambda0: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> (f64, f64) {
    let b = m - a * pi * c.transpose();
    let d = lambda0 - c * pi * c.transpose();
    let di = d.try_inverse().expect("innovation covariance singular");
    let next = a * pi * a.transpose() + &b * &di * b.transpose();
    let k_direct = &b * di;
    ((next - pi).amax(), (k_direct - k).amax())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// One grid cell's monthly values at a single depth.
pub struct Cell {
    pub lat: f64,
    pub lon: f64,
    pub values: Vec<f64>,
}

/// Box means by direct enumeration: for every whole-degree box corner in the
/// region, scan all cells, keep those whose center lies in the box, and
/// average the observed ones month by month. Returns `(id, series)` for the
/// boxes that survive the coverage and drop rules, in latitude-then-longitude
/// order.
pub fn box_oracle(
    cells: &[Cell],
    region: (f64, f64, f64, f64),
    size: f64,
    min_coverage: f64,
    max_missing: f64,
    cos_weights: bool,
) -> Vec<(String, Vec<f64>)> {
    let (lat0, lat1, lon0, lon1) = region;
    let tau = cells[0].values.len();
    let mut out = Vec::new();
    let mut sw_lat = lat0;
    while sw_lat < lat1 {
        let mut sw_lon = lon0;
        while sw_lon < lon1 {
            let members: Vec<&Cell> = cells
                .iter()
                .filter(|c| {
                    c.lat >= sw_lat
                        && c.lat < sw_lat + size
                        && c.lon >= sw_lon
                        && c.lon < sw_lon + size
                        && c.values.iter().any(|v| !v.is_nan())
                })
                .collect();
            if !members.is_empty() {
                let mut series = Vec::with_capacity(tau);
                for t in 0..tau {
                    let obs: Vec<&&Cell> =
                        members.iter().filter(|c| !c.values[t].is_nan()).collect();
                    if obs.is_empty() || (obs.len() as f64) < min_coverage * members.len() as f64 {
                        series.push(f64::NAN);
                    } else {
                        let w = |c: &Cell| if cos_weights { c.lat.to_radians().cos() } else { 1.0 };
                        let num: f64 = obs.iter().map(|c| w(c) * c.values[t]).sum();
                        let den: f64 = obs.iter().map(|c| w(c)).sum();
                        series.push(num / den);
                    }
                }
                let missing = series.iter().filter(|v| v.is_nan()).count();
                if missing as f64 <= max_missing * tau as f64 {
                    out.push((format!("{}N_{}E", sw_lat as i64, sw_lon as i64), series));
                }
            }
            sw_lon += size;
        }
        sw_lat += size;
    }
    out
}
