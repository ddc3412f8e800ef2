//! Noisy-input GP: a squared-exponential GP whose training likelihood accounts
//! for input noise through a first-order Taylor term, and which can predict at
//! a Gaussian-distributed test input.

mod model;
mod predict;

pub use model::{fit_nigp, fit_nigp_with, InputNoiseSpec, NigpFitOptions, NigpModel};
pub use predict::{predictive_interval, StochasticPrediction, StochasticTestInput};
