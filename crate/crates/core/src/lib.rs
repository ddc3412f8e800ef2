//! Two-stage probabilistic load forecasting.
//!
//! The first stage forecasts the hour-ahead phase-angle differences that feed
//! the load model, using a GP whose covariance is the infinite-width limit of
//! a deep network ([`nngp`]). The second stage is a noisy-input GP ([`nigp`])
//! that turns the first-stage predictive mean and variance into a point and
//! interval load forecast. Variance-based sensitivity analysis ([`gsa`])
//! prunes the input space of both stages, and [`grid_sim`] generates the
//! synthetic DC power-flow data everything is evaluated on.

pub mod error;
pub mod gp;
pub mod grid_sim;
pub mod gsa;
pub mod linalg;
pub mod metrics;
pub mod nigp;
pub mod nngp;
pub mod pipeline;

pub use error::{Error, ErrorKind, Result};
