//! Squared-exponential GP regression: kernel, exact posterior, posterior-mean
//! gradients and maximum-likelihood hyperparameter fitting.

mod hyper;
mod mle;
mod model;

pub use hyper::{se_kernel, SeHyperParams};
pub use mle::{fit_mle, fit_mle_with, log_marginal_likelihood, FitOptions, MleFit, NOISE_FLOOR};
pub use model::{GpModel, GpModelRecord};

pub(crate) use mle::{fit_impl, NoiseBasis};
