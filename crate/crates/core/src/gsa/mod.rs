//! Variance-based sensitivity analysis with dependent functional inputs.
//!
//! Sampled input vectors are compressed with principal components, the
//! component coefficients are modelled by a Gaussian mixture, and new inputs
//! drawn from it feed a Monte Carlo (Jansen) estimate of total Sobol indices
//! of a trained surrogate.

mod decompose;
mod mixture;
mod sobol;

pub use decompose::{decompose, ComponentTarget, FunctionalDecomposition};
pub use mixture::{fit_sampler, CoefficientSampler};
pub use sobol::{
    first_stage_importance, generate_matrices, jansen_total_index, select_features, FnSurrogate,
    SampleMatrices, SensitivityReport, SobolEstimator, Surrogate, HOURS_PER_BLOCK,
};
