//! Structural decomposition of gridded geophysical time series and
//! extraction of basin-scale common trends.
//!
//! The pipeline has two steps:
//!
//! 1. every box series is decomposed into trend, seasonal, cycle and
//!    observation error by a maximum-likelihood structural model
//!    ([`structural`], built on the Kalman engine in [`ssm`]);
//! 2. the partial residuals (trend plus error) of all boxes at one depth are
//!    passed to covariance-based subspace identification ([`subspace`]),
//!    which yields a small number of common trends and their loading maps.
//!
//! [`grid`] handles box averaging and file formats, [`analysis`] the
//! post-processing (change points, scalings, stratification) and [`synth`]
//! generates planted test data.

// Range checks are written `!(x > 0.0)` on purpose so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod grid;
pub mod optim;
pub mod series;
pub mod ssm;
pub mod structural;
pub mod subspace;
pub mod synth;

pub use error::{Error, Result};
pub use series::{ObservationSeries, YearMonth};

// Book chapters are compiled as doctests so the guide cannot drift from the
// library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/state-space.md")]
    mod state_space {}
    #[doc = include_str!("../../../book/src/structural.md")]
    mod structural {}
    #[doc = include_str!("../../../book/src/subspace.md")]
    mod subspace {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
}
