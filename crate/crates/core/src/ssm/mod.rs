//! Linear-Gaussian state-space engine: filtering, smoothing, likelihood and
//! simulation for univariate observations.
//!
//! All functions are pure; independent series can be processed from many
//! threads at once.

mod filter;
mod model;
mod simulate;
mod smoother;

pub use filter::{filter, loglik, FilterOutput, StepKind, MIN_INNOVATION_VAR};
pub use model::GaussianStateSpace;
pub use simulate::simulate;
pub use smoother::{smooth, SmootherOutput};
