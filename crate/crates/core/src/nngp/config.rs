use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pointwise nonlinearity of the underlying infinite-width network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Relu,
    Tanh,
    Identity,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Nonlinearity::Relu => u.max(0.0),
            Nonlinearity::Tanh => u.tanh(),
            Nonlinearity::Identity => u,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Nonlinearity::Relu => 1,
            Nonlinearity::Tanh => 2,
            Nonlinearity::Identity => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Relu => "relu",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Nonlinearity::Relu),
            "tanh" => Ok(Nonlinearity::Tanh),
            "identity" | "linear" => Ok(Nonlinearity::Identity),
            other => Err(Error::Config(format!("unknown nonlinearity '{other}'"))),
        }
    }
}

/// Hyperparameters of the deep-kernel GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NngpConfig {
    /// Number of hidden layers `L` (recursion depth), at least 2.
    pub depth: usize,
    /// Weight prior variance `σ_w²`.
    pub weight_var: f64,
    /// Bias prior variance `σ_b²`.
    pub bias_var: f64,
    pub nonlinearity: Nonlinearity,
    /// Dimension `d_in` of the vectors the kernel is evaluated on.
    pub input_dim: usize,
    /// Observation noise `σ_obs²` as a fraction of the training output variance.
    pub obs_noise: f64,
    /// Use the closed-form arc-cosine integral instead of the lookup table
    /// (only meaningful for ReLU).
    #[serde(default)]
    pub analytic_relu: bool,
}

impl NngpConfig {
    /// ReLU network of depth 2 with `σ_b = σ_w = 1` and `σ_obs² = 1e-6`.
    pub fn new(input_dim: usize) -> Self {
        NngpConfig {
            depth: 2,
            weight_var: 1.0,
            bias_var: 1.0,
            nonlinearity: Nonlinearity::Relu,
            input_dim,
            obs_noise: 1e-6,
            analytic_relu: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("NNGP depth must be >= 2, got {}", self.depth)));
        }
        if !(self.weight_var > 0.0 && self.weight_var.is_finite()) {
            return Err(Error::Config("weight prior variance must be positive".into()));
        }
        if !(self.bias_var >= 0.0 && self.bias_var.is_finite()) {
            return Err(Error::Config("bias prior variance must be non-negative".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if !(self.obs_noise >= 0.0 && self.obs_noise.is_finite()) {
            return Err(Error::Config("observation noise must be non-negative".into()));
        }
        Ok(())
    }

    pub(crate) fn uses_closed_form(&self) -> bool {
        self.analytic_relu && self.nonlinearity == Nonlinearity::Relu
    }
}
