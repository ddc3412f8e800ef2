use std::sync::atomic::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::model::NigpModel;
use crate::error::{Error, Result};

/// Gaussian test input with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticTestInput {
    mean: Vec<f64>,
    variances: Vec<f64>,
}

impl StochasticTestInput {
    pub fn new(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: variances.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("test-input mean must be finite".into()));
        }
        if variances.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Input("test-input variances must be finite and non-negative".into()));
        }
        Ok(StochasticTestInput { mean, variances })
    }

    pub fn deterministic(mean: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, vec![0.0; d])
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Predictive moments at a stochastic test input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticPrediction {
    pub mean: f64,
    /// Latent-function variance (observation noise excluded).
    pub variance: f64,
    /// The raw variance was slightly negative and was set to zero.
    pub clamped: bool,
}

impl NigpModel {
    fn check_test(&self, test: &StochasticTestInput) -> Result<()> {
        if test.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: test.dim(),
            });
        }
        Ok(())
    }

    /// Expected kernel vector `q_i = E[C(x_i, x_*)]` for `x_* ~ N(μ, Σ)`:
    /// `σ_f² |ΣΛ⁻¹ + I|^{−1/2} exp(−½ (x_i − μ)ᵀ (Σ + Λ)⁻¹ (x_i − μ))`.
    pub fn compute_q(&self, test: &StochasticTestInput) -> Result<DVector<f64>> {
        self.check_test(test)?;
        let h = self.hyper();
        let lam = &h.sq_length_scales;
        let s = test.variances();
        let mu = test.mean();
        let det: f64 = lam.iter().zip(s).map(|(l, v)| 1.0 + v / l).product();
        let pre = h.signal_var / det.sqrt();
        let x = self.base.inputs();
        Ok(DVector::from_iterator(
            x.nrows(),
            x.row_iter().map(|row| {
                let q: f64 = (0..mu.len())
                    .map(|k| (row[k] - mu[k]).powi(2) / (s[k] + lam[k]))
                    .sum();
                pre * (-0.5 * q).exp()
            }),
        ))
    }

    /// Expected kernel outer product `Q_ij = E[C(x_i, x_*) C(x_j, x_*)]`.
    ///
    /// Written as `C(x_i, μ) C(x_j, μ) Π_k (1 + 2s_k/λ_k)^{−1/2}
    /// exp(Σ_k 2s_k (z_k − μ_k)² / (λ_k (λ_k + 2s_k)))` with `z = (x_i + x_j)/2`,
    /// which equals the usual form but stays finite when some `s_k = 0`.
    pub fn compute_big_q(&self, test: &StochasticTestInput) -> Result<DMatrix<f64>> {
        self.check_test(test)?;
        let h = self.hyper();
        let lam = &h.sq_length_scales;
        let s = test.variances();
        let mu = test.mean();
        let x = self.base.inputs();
        let n = x.nrows();
        let d = mu.len();
        let det: f64 = lam.iter().zip(s).map(|(l, v)| 1.0 + 2.0 * v / l).product();
        let inv_det = 1.0 / det.sqrt();
        let c_mu: Vec<f64> = x
            .row_iter()
            .map(|row| {
                let q: f64 = (0..d).map(|k| (row[k] - mu[k]).powi(2) / lam[k]).sum();
                h.signal_var * (-0.5 * q).exp()
            })
            .collect();
        let weight: Vec<f64> = (0..d).map(|k| 2.0 * s[k] / (lam[k] * (lam[k] + 2.0 * s[k]))).collect();
        let active: Vec<usize> = (0..d).filter(|&k| s[k] > 0.0).collect();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut e = 0.0;
                for &k in &active {
                    let z = 0.5 * (x[(i, k)] + x[(j, k)]) - mu[k];
                    e += weight[k] * z * z;
                }
                let v = c_mu[i] * c_mu[j] * inv_det * e.exp();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// `Cov(k(x_*)) = Q − q qᵀ`, built entrywise as `q_i q_j expm1(E_ij)`
    /// with `E_ij = ln Q_ij − ln q_i − ln q_j` in closed form. Every term of
    /// `E_ij` is proportional to the input variances, so entries stay
    /// relatively accurate as they shrink, where forming `Q` and subtracting
    /// would leave only rounding noise.
    pub fn kernel_vector_covariance(&self, test: &StochasticTestInput) -> Result<DMatrix<f64>> {
        let q = self.compute_q(test)?;
        let h = self.hyper();
        let lam = &h.sq_length_scales;
        let s = test.variances();
        let mu = test.mean();
        let x = self.base.inputs();
        let n = x.nrows();
        let active: Vec<usize> = (0..mu.len()).filter(|&k| s[k] > 0.0).collect();
        let mut constant = 0.0;
        let mut shrink = Vec::with_capacity(active.len());
        let mut weight = Vec::with_capacity(active.len());
        for &k in &active {
            let r = s[k] / lam[k];
            constant += r.ln_1p() - 0.5 * (2.0 * r).ln_1p();
            shrink.push(0.5 * s[k] / (lam[k] * (lam[k] + s[k])));
            weight.push(2.0 * s[k] / (lam[k] * (lam[k] + 2.0 * s[k])));
        }
        let dev: Vec<Vec<f64>> = (0..n)
            .map(|i| active.iter().map(|&k| x[(i, k)] - mu[k]).collect())
            .collect();
        let own: Vec<f64> = dev
            .iter()
            .map(|a| a.iter().zip(&shrink).map(|(v, c)| c * v * v).sum())
            .collect();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut e = constant - own[i] - own[j];
                for (t, w) in weight.iter().enumerate() {
                    let z = 0.5 * (dev[i][t] + dev[j][t]);
                    e += w * z * z;
                }
                let v = q[i] * q[j] * e.exp_m1();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// Predictive mean and variance when the test input is Gaussian:
    /// `mean = ȳ + αᵀq`, `variance = σ_f² + αᵀQα − (αᵀq)² − tr(K⁻¹Q)`, with
    /// `K` the corrected training covariance. A zero covariance falls back to
    /// [`predict_deterministic`](Self::predict_deterministic).
    ///
    /// The variance is evaluated as `(σ_f² − ‖L⁻¹q‖²) + αᵀCα − tr(K⁻¹C)`
    /// with `C = Q − qqᵀ` from
    /// [`kernel_vector_covariance`](Self::kernel_vector_covariance), which is
    /// the same quantity but does not cancel catastrophically when the
    /// training covariance is nearly singular.
    ///
    /// Raw variances within `1e-8 · max(1, σ_f²)` below zero are clamped (and
    /// counted); anything more negative is a numerical-consistency error.
    pub fn predict_stochastic(&self, test: &StochasticTestInput) -> Result<StochasticPrediction> {
        self.check_test(test)?;
        if test.variances().iter().all(|v| *v == 0.0) {
            let (mean, variance) = self.predict_deterministic(test.mean())?;
            return Ok(StochasticPrediction {
                mean,
                variance,
                clamped: false,
            });
        }
        let alpha = self.base.alpha();
        let q = self.compute_q(test)?;
        let cov = self.kernel_vector_covariance(test)?;
        let centered = alpha.dot(&q);
        let explained = self.base.factor.solve_lower(&q).norm_squared();
        let spread = (&cov * alpha).dot(alpha);
        let trace = self.inverse.dot(&cov);
        let sf2 = self.hyper().signal_var;
        let raw = (sf2 - explained) + spread - trace;
        let tol = 1e-8 * sf2.max(1.0);
        let (variance, clamped) = if raw >= 0.0 {
            (raw, false)
        } else if raw >= -tol {
            self.clamp_count.fetch_add(1, Ordering::Relaxed);
            log::warn!("clamped stochastic predictive variance {raw:e} to zero");
            (0.0, true)
        } else {
            return Err(Error::NumericalConsistency(format!(
                "stochastic predictive variance {raw:e} is negative beyond tolerance"
            )));
        };
        Ok(StochasticPrediction {
            mean: self.base.prior_mean() + centered,
            variance,
            clamped,
        })
    }
}

/// Central normal interval `mean ± z_{(1+level)/2} √variance`.
pub fn predictive_interval(mean: f64, variance: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Input(format!("interval level must be in (0, 1), got {level}")));
    }
    if !(variance >= 0.0 && variance.is_finite()) || !mean.is_finite() {
        return Err(Error::Input(format!("invalid predictive moments ({mean}, {variance})")));
    }
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + level));
    let half = z * variance.sqrt();
    Ok((mean - half, mean + half))
}
