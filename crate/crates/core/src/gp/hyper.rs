use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-exponential kernel hyperparameters.
///
/// `sq_length_scales` is the diagonal of `Λ`, i.e. squared length scales:
/// the kernel is `σ_f² exp(−½ Σ_k (x_k − x′_k)² / Λ_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeHyperParams {
    pub signal_var: f64,
    pub sq_length_scales: Vec<f64>,
    pub noise_var: f64,
}

impl SeHyperParams {
    pub fn new(signal_var: f64, sq_length_scales: Vec<f64>, noise_var: f64) -> Result<Self> {
        let h = SeHyperParams {
            signal_var,
            sq_length_scales,
            noise_var,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn dim(&self) -> usize {
        self.sq_length_scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_var > 0.0 && self.signal_var.is_finite()) {
            return Err(Error::Input(format!("signal variance must be positive, got {}", self.signal_var)));
        }
        if let Some(l) = self.sq_length_scales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Input(format!("length scales must be positive, got {l}")));
        }
        if self.sq_length_scales.is_empty() {
            return Err(Error::Input("at least one length scale is required".into()));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::Input(format!("noise variance must be non-negative, got {}", self.noise_var)));
        }
        Ok(())
    }

    /// `[ln σ_f², ln Λ_1, …, ln Λ_d, ln σ_y²]`; the noise floor keeps the
    /// logarithm finite when `σ_y² = 0`.
    pub(crate) fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim() + 2);
        v.push(self.signal_var.ln());
        v.extend(self.sq_length_scales.iter().map(|l| l.ln()));
        v.push(self.noise_var.max(1e-300).ln());
        v
    }

    #[cfg(test)]
    pub(crate) fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        SeHyperParams {
            signal_var: v[0].exp(),
            sq_length_scales: v[1..=d].iter().map(|l| l.exp()).collect(),
            noise_var: v[d + 1].exp(),
        }
    }

    /// Kernel value without the validity checks of [`se_kernel`].
    #[inline]
    pub(crate) fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut q = 0.0;
        for ((a, b), l) in x.iter().zip(y).zip(&self.sq_length_scales) {
            let d = a - b;
            q += d * d / l;
        }
        self.signal_var * (-0.5 * q).exp()
    }
}

/// `σ_f² exp(−½ (x − x′)ᵀ Λ⁻¹ (x − x′))`.
pub fn se_kernel(x: &[f64], x_prime: &[f64], hyper: &SeHyperParams) -> Result<f64> {
    hyper.validate()?;
    for v in [x, x_prime] {
        if v.len() != hyper.dim() {
            return Err(Error::DimensionMismatch {
                expected: hyper.dim(),
                got: v.len(),
            });
        }
    }
    Ok(hyper.eval(x, x_prime))
}
