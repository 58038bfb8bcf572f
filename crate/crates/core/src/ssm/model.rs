use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Time-invariant linear-Gaussian state-space model with a scalar observation.
///
/// ```text
/// y(t)   = obs_row · x(t) + e(t),          e(t) ~ N(0, obs_var)
/// x(t+1) = transition · x(t) + w(t),       w(t) ~ N(0, state_cov)
/// x(1)   ~ N(init_mean, init_cov)          (non-diffuse states)
/// ```
///
/// States flagged in `diffuse` get an improper flat prior handled by the
/// exact-diffuse recursions; their rows and columns of `init_cov` must be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStateSpace {
    pub transition: DMatrix<f64>,
    pub obs_row: DVector<f64>,
    pub state_cov: DMatrix<f64>,
    pub obs_var: f64,
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
    pub diffuse: Vec<bool>,
}

const PSD_TOL: f64 = 1e-10;

impl GaussianStateSpace {
    /// Builds a model and checks every invariant, including positive
    /// semi-definiteness of the covariances.
    pub fn new(
        transition: DMatrix<f64>,
        obs_row: DVector<f64>,
        state_cov: DMatrix<f64>,
        obs_var: f64,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
        diffuse: Vec<bool>,
    ) -> Result<Self> {
        let model = Self {
            transition,
            obs_row,
            state_cov,
            obs_var,
            init_mean,
            init_cov,
            diffuse,
        };
        model.validate()?;
        check_psd("state_cov", &model.state_cov)?;
        check_psd("init_cov", &model.init_cov)?;
        Ok(model)
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn diffuse_count(&self) -> usize {
        self.diffuse.iter().filter(|d| **d).count()
    }

    /// Shape, finiteness and symmetry checks (no eigen-decomposition).
    pub fn validate(&self) -> Result<()> {
        let m = self.transition.nrows();
        if m == 0 || self.transition.ncols() != m {
            return Err(Error::contract("transition must be square and non-empty"));
        }
        if self.obs_row.len() != m {
            return Err(Error::contract(format!(
                "obs_row has length {}, expected {m}",
                self.obs_row.len()
            )));
        }
        if self.state_cov.shape() != (m, m) || self.init_cov.shape() != (m, m) {
            return Err(Error::contract("state_cov and init_cov must be m×m"));
        }
        if self.init_mean.len() != m || self.diffuse.len() != m {
            return Err(Error::contract("init_mean and diffuse must have length m"));
        }
        let finite = self
            .transition
            .iter()
            .chain(self.obs_row.iter())
            .chain(self.state_cov.iter())
            .chain(self.init_mean.iter())
            .chain(self.init_cov.iter())
            .all(|v| v.is_finite());
        if !finite || !self.obs_var.is_finite() {
            return Err(Error::contract("model matrices must be finite"));
        }
        if self.obs_var < 0.0 {
            return Err(Error::contract(format!(
                "obs_var must be non-negative, got {}",
                self.obs_var
            )));
        }
        check_symmetric("state_cov", &self.state_cov)?;
        check_symmetric("init_cov", &self.init_cov)?;
        for (i, &d) in self.diffuse.iter().enumerate() {
            if d && (0..m).any(|j| self.init_cov[(i, j)] != 0.0 || self.init_cov[(j, i)] != 0.0) {
                return Err(Error::contract(format!(
                    "state {i} is diffuse but has a finite prior covariance"
                )));
            }
        }
        Ok(())
    }
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::contract(format!("{name} is not symmetric")));
            }
        }
    }
    Ok(())
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let eig = SymmetricEigen::new(m.clone());
    let scale = m.amax().max(1.0);
    if let Some(min) = eig.eigenvalues.iter().cloned().reduce(f64::min) {
        if min < -PSD_TOL * scale {
            return Err(Error::contract(format!(
                "{name} is not positive semi-definite (eigenvalue {min:e})"
            )));
        }
    }
    Ok(())
}

/// Symmetric square root factor `L` with `L Lᵀ = cov` (via eigen-decomposition,
/// so singular covariances are fine).
pub(crate) fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let mut l = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    l
}
