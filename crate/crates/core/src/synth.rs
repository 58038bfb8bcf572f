//! Seeded synthetic panels with known common factors.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::series::YearMonth;
use crate::subspace::SeriesPanel;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub n_series: usize,
    pub length: usize,
    /// Root-mean-square size of each factor; the count sets the number of
    /// factors. Distinct values keep the factors separable.
    pub amplitudes: Vec<f64>,
    /// Standard deviation of the iid noise added to every series.
    pub noise_sd: f64,
    /// Amplitude of a fixed annual sinusoid with a random phase per series.
    pub seasonal_amplitude: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_series: 252,
            length: 564,
            amplitudes: vec![4.0, 3.0, 2.0, 1.0],
            noise_sd: 0.3,
            seasonal_amplitude: 0.0,
            seed: 0,
        }
    }
}

/// A panel `y = F diag(a) Lᵀ + seasonal + noise` with its ingredients.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPanel {
    /// `τ × r` factors, orthonormal columns scaled by `√τ` (raw moments).
    pub factors: DMatrix<f64>,
    /// `N × r` loadings with orthonormal columns scaled by `√N`.
    pub loadings: DMatrix<f64>,
    pub amplitudes: Vec<f64>,
    /// `τ × N` factor part.
    pub signal: DMatrix<f64>,
    pub seasonal: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    /// `signal + seasonal + noise`.
    pub data: DMatrix<f64>,
}

impl PlantedPanel {
    pub fn panel(&self, depth_m: f64, origin: YearMonth) -> Result<SeriesPanel> {
        let ids = (0..self.data.ncols()).map(|j| format!("s{j:03}")).collect();
        SeriesPanel::new(ids, depth_m, origin, self.data.clone())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gram–Schmidt on the columns (raw inner product), twice for stability.
fn orthonormalize(m: &mut DMatrix<f64>) -> Result<()> {
    for _ in 0..2 {
        for j in 0..m.ncols() {
            for i in 0..j {
                let proj = m.column(i).dot(&m.column(j));
                let qi = m.column(i).into_owned();
                m.column_mut(j).axpy(-proj, &qi, 1.0);
            }
            let norm = m.column(j).norm();
            if norm < 1e-12 {
                return Err(Error::Numerical("degenerate random draw".into()));
            }
            m.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    Ok(())
}

/// Random-walk factors and random loadings, orthogonalized in sample so the
/// factors are exactly the principal directions of the signal.
pub fn planted_panel(cfg: &PlantedConfig) -> Result<PlantedPanel> {
    let r = cfg.amplitudes.len();
    let (tau, n) = (cfg.length, cfg.n_series);
    if r == 0 || r > n || r >= tau {
        return Err(Error::contract(format!(
            "{r} factors do not fit a panel of {n} series × {tau} steps"
        )));
    }
    if !(cfg.noise_sd >= 0.0) || !cfg.seasonal_amplitude.is_finite() {
        return Err(Error::contract("noise and seasonal sizes must be finite and ≥ 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut factors = DMatrix::zeros(tau, r);
    for j in 0..r {
        let mut level = 0.0;
        for t in 0..tau {
            level += normal(&mut rng);
            factors[(t, j)] = level;
        }
    }
    orthonormalize(&mut factors)?;
    factors *= (tau as f64).sqrt();
    let mut loadings = DMatrix::from_fn(n, r, |_, _| normal(&mut rng));
    orthonormalize(&mut loadings)?;
    loadings *= (n as f64).sqrt();

    let scaled = &factors * DMatrix::from_diagonal(&DVector::from_vec(cfg.amplitudes.clone()));
    let signal = &scaled * loadings.transpose();
    let phases: Vec<f64> = (0..n)
        .map(|_| 2.0 * std::f64::consts::PI * normal(&mut rng))
        .collect();
    let seasonal = DMatrix::from_fn(tau, n, |t, j| {
        cfg.seasonal_amplitude * (2.0 * std::f64::consts::PI * t as f64 / 12.0 + phases[j]).sin()
    });
    let noise = DMatrix::from_fn(tau, n, |_, _| cfg.noise_sd * normal(&mut rng));
    let data = &signal + &seasonal + &noise;
    Ok(PlantedPanel {
        factors,
        loadings,
        amplitudes: cfg.amplitudes.clone(),
        signal,
        seasonal,
        noise,
        data,
    })
}

/// Simulates `x(t+1) = A x(t) + K e(t)`, `y(t) = C x(t) + e(t)` with
/// `e(t) ~ N(0, Σ)`, `Σ = LLᵀ`, from `x(1) = 0`. Returns `τ × N`.
pub fn simulate_innovation_model(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    k: &DMatrix<f64>,
    noise_chol: &DMatrix<f64>,
    length: usize,
    burn_in: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let big_n = c.nrows();
    if a.ncols() != n || c.ncols() != n || k.shape() != (n, big_n) || noise_chol.shape() != (big_n, big_n) {
        return Err(Error::contract("inconsistent innovation-model shapes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::zeros(n);
    let mut out = DMatrix::zeros(length, big_n);
    for t in 0..length + burn_in {
        let z = DVector::from_fn(big_n, |_, _| normal(&mut rng));
        let e = noise_chol * z;
        if t >= burn_in {
            let y = c * &x + &e;
            out.row_mut(t - burn_in).copy_from(&y.transpose());
        }
        x = a * &x + k * &e;
    }
    Ok(out)
}
