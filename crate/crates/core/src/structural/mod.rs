//! The four-component structural model `y = T + S + I + e`.
//!
//! [`assemble`] turns a [`StructuralSpec`] and [`StructuralParams`] into a
//! [`GaussianStateSpace`](crate::ssm::GaussianStateSpace); [`fit`] estimates
//! the parameters by maximum likelihood and [`decompose`] returns the
//! smoothed components at given parameters.

mod fit;
mod model;

pub use fit::{
    decompose, filled_partial_residual, fit, partial_residual, DecompositionResult, FitOptions,
};
pub use model::{assemble, CycleMode, StateLayout, StructuralParams, StructuralSpec};
