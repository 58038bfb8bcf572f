use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{psd_factor, GaussianStateSpace};
use crate::error::{Error, Result};
use crate::series::{ObservationSeries, YearMonth};

/// Draws `(y, states)` from the model; `states` is `length × m`.
///
/// Diffuse states have no proper prior, so their values at `t = 1` must be
/// given in `diffuse_init` (one entry per diffuse state, in state order).
/// Output is a pure function of the arguments.
pub fn simulate(
    model: &GaussianStateSpace,
    length: usize,
    seed: u64,
    diffuse_init: Option<&[f64]>,
) -> Result<(ObservationSeries, DMatrix<f64>)> {
    model.validate()?;
    let m = model.dim();
    let nd = model.diffuse_count();
    let fixed = match (nd, diffuse_init) {
        (0, _) => Vec::new(),
        (_, None) => {
            return Err(Error::contract(format!(
                "model has {nd} diffuse states; an initial value is required for each"
            )))
        }
        (_, Some(v)) if v.len() != nd => {
            return Err(Error::contract(format!(
                "expected {nd} diffuse initial values, got {}",
                v.len()
            )))
        }
        (_, Some(v)) => v.to_vec(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normals = |k: usize| -> DVector<f64> {
        DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(&mut rng)))
    };

    let init_factor = psd_factor(&model.init_cov);
    let state_factor = psd_factor(&model.state_cov);
    let obs_sd = model.obs_var.sqrt();

    let mut x = &model.init_mean + &init_factor * normals(m);
    let mut fixed_iter = fixed.iter();
    for i in 0..m {
        if model.diffuse[i] {
            x[i] = *fixed_iter.next().expect("counted above");
        }
    }

    let mut states = DMatrix::zeros(length, m);
    let mut y = Vec::with_capacity(length);
    for t in 0..length {
        states.row_mut(t).copy_from(&x.transpose());
        let e: f64 = normals(1)[0];
        y.push(model.obs_row.dot(&x) + obs_sd * e);
        x = &model.transition * &x + &state_factor * normals(m);
    }
    let series = ObservationSeries::with_origin(y, YearMonth::default(), 12)?;
    Ok((series, states))
}
