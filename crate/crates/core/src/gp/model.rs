use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::hyper::SeHyperParams;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, Factor};

/// Squared-exponential GP conditioned on training data.
///
/// The prior mean is the training-output average, so far from the data the
/// posterior mean reverts to it. An optional per-point `correction` is added
/// to the noise diagonal: `K = C + σ_y² I + diag(correction)`.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub(crate) hyper: SeHyperParams,
    pub(crate) x: DMatrix<f64>,
    pub(crate) y: Vec<f64>,
    pub(crate) y_mean: f64,
    pub(crate) correction: Option<Vec<f64>>,
    pub(crate) factor: Factor,
    /// `K⁻¹ (y − ȳ)`.
    pub(crate) alpha: DVector<f64>,
}

/// Serializable snapshot of a [`GpModel`]; the factorization is rebuilt on
/// load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpModelRecord {
    pub hyper: SeHyperParams,
    /// Training inputs, one row per observation.
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    #[serde(default)]
    pub correction: Option<Vec<f64>>,
}

pub(crate) fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

impl GpModel {
    pub fn new(
        x: DMatrix<f64>,
        y: &[f64],
        hyper: SeHyperParams,
        correction: Option<&[f64]>,
    ) -> Result<Self> {
        hyper.validate()?;
        let n = x.nrows();
        if n == 0 || y.len() != n {
            return Err(Error::Input(format!(
                "need matching non-empty inputs ({n} rows) and outputs ({})",
                y.len()
            )));
        }
        if x.ncols() != hyper.dim() {
            return Err(Error::DimensionMismatch {
                expected: hyper.dim(),
                got: x.ncols(),
            });
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Input("training data contain non-finite values".into()));
        }
        if let Some(c) = correction {
            if c.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: c.len() });
            }
            if c.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Input("correction entries must be finite and non-negative".into()));
            }
        }
        let mut k = gram(&x, &hyper);
        for i in 0..n {
            k[(i, i)] += hyper.noise_var + correction.map_or(0.0, |c| c[i]);
        }
        let factor = cholesky_jittered(k)?;
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let centered = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let alpha = factor.solve(&centered);
        Ok(GpModel {
            hyper,
            x,
            y: y.to_vec(),
            y_mean,
            correction: correction.map(|c| c.to_vec()),
            factor,
            alpha,
        })
    }

    pub fn hyper(&self) -> &SeHyperParams {
        &self.hyper
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn outputs(&self) -> &[f64] {
        &self.y
    }

    pub fn prior_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn correction(&self) -> Option<&[f64]> {
        self.correction.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }

    /// Weights `K⁻¹ (y − ȳ)` of the posterior mean.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// `K⁻¹` of the (corrected) training covariance.
    pub fn factor_l(&self) -> DMatrix<f64> {
        self.factor.l.clone()
    }

    pub fn inverse_covariance(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.n_train(),
            self.x.row_iter().map(|r| {
                let row: Vec<f64> = r.iter().cloned().collect();
                self.hyper.eval(x, &row)
            }),
        )
    }

    /// Posterior mean and latent-function variance at `x`.
    ///
    /// The variance excludes the observation noise; add
    /// [`SeHyperParams::noise_var`] for the variance of a new measurement.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(x)?;
        let k = self.cross(x);
        let mean = self.y_mean + k.dot(&self.alpha);
        let v = self.factor.solve_lower(&k);
        let var = (self.hyper.signal_var - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.y_mean + self.cross(x).dot(&self.alpha))
    }

    /// Gradient of the posterior mean with respect to the test input:
    /// `−Σ_j α_j C(x, x_j) Λ⁻¹ (x − x_j)`.
    pub fn posterior_mean_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut grad = vec![0.0; self.dim()];
        for (j, row) in self.x.row_iter().enumerate() {
            let xj: Vec<f64> = row.iter().cloned().collect();
            let w = self.alpha[j] * self.hyper.eval(x, &xj);
            for (k, g) in grad.iter_mut().enumerate() {
                *g -= w * (x[k] - xj[k]) / self.hyper.sq_length_scales[k];
            }
        }
        Ok(grad)
    }

    /// Posterior-mean gradients at every training input, one row each.
    pub fn training_gradients(&self) -> DMatrix<f64> {
        let n = self.n_train();
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        for i in 0..n {
            let xi: Vec<f64> = self.x.row(i).iter().cloned().collect();
            let g = self.posterior_mean_gradient(&xi).expect("dimension matches");
            for k in 0..d {
                out[(i, k)] = g[k];
            }
        }
        out
    }

    pub fn to_record(&self) -> GpModelRecord {
        GpModelRecord {
            hyper: self.hyper.clone(),
            inputs: rows_of(&self.x),
            outputs: self.y.clone(),
            correction: self.correction.clone(),
        }
    }

    pub fn from_record(record: &GpModelRecord) -> Result<Self> {
        let n = record.inputs.len();
        let d = record.hyper.dim();
        if record.inputs.iter().any(|r| r.len() != d) {
            return Err(Error::Parse("model record rows do not match the length-scale count".into()));
        }
        let x = DMatrix::from_fn(n, d, |r, c| record.inputs[r][c]);
        GpModel::new(x, &record.outputs, record.hyper.clone(), record.correction.as_deref())
    }
}

/// Noise-free SE gram matrix over the rows of `x`.
pub(crate) fn gram(x: &DMatrix<f64>, hyper: &SeHyperParams) -> DMatrix<f64> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = rows_of(x);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hyper.signal_var;
        for j in 0..i {
            let v = hyper.eval(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(d: usize) -> SeHyperParams {
        SeHyperParams::new(1.3, vec![0.5; d], 0.0).unwrap()
    }

    #[test]
    fn interpolates_without_noise() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.5, 4.0]);
        let y = [0.3, -0.2, 1.1, 0.0];
        let m = GpModel::new(x, &y, hyper(1), None).unwrap();
        for (xi, yi) in [0.0, 1.0, 2.5, 4.0].iter().zip(y) {
            let (mean, var) = m.predict(&[*xi]).unwrap();
            assert!((mean - yi).abs() < 1e-8);
            assert!(var < 1e-8);
        }
    }

    #[test]
    fn far_field_reverts_to_prior() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.5, -1.0, 0.2]);
        let y = [1.0, -1.0, 0.0];
        let m = GpModel::new(x, &y, hyper(2), None).unwrap();
        let (mean, var) = m.predict(&[100.0, -100.0]).unwrap();
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.3).abs() < 1e-12);
    }

    #[test]
    fn duplicate_rows_are_jittered() {
        let x = DMatrix::from_row_slice(3, 1, &[0.5, 0.5, 1.0]);
        let m = GpModel::new(x, &[2.0, 2.0, 1.0], hyper(1), None).unwrap();
        assert!(m.jitter() > 0.0);
        let (mean, var) = m.predict(&[0.7]).unwrap();
        assert!(mean.is_finite() && var.is_finite());
    }

    #[test]
    fn flat_posterior_has_zero_gradient() {
        let x = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, 0.2]);
        let m = GpModel::new(x, &[3.0; 5], hyper(2), None).unwrap();
        for g in m.posterior_mean_gradient(&[0.3, 0.8]).unwrap() {
            assert!(g.abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_pair_gradient_points_along_separation() {
        let x = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]);
        let m = GpModel::new(x, &[-1.0, 1.0], hyper(2), None).unwrap();
        let g = m.posterior_mean_gradient(&[0.0, 0.0]).unwrap();
        assert!(g[0] > 0.0);
        assert!(g[1].abs() < 1e-15);
    }

    #[test]
    fn zero_correction_matches_none() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.4, 1.0]);
        let mut h = hyper(1);
        h.noise_var = 0.01;
        let a = GpModel::new(x.clone(), &[0.0, 1.0, 0.5], h.clone(), None).unwrap();
        let b = GpModel::new(x, &[0.0, 1.0, 0.5], h, Some(&[0.0; 3])).unwrap();
        assert_eq!(a.predict(&[0.7]).unwrap(), b.predict(&[0.7]).unwrap());
    }

    #[test]
    fn record_round_trip() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.4, 1.0]);
        let m = GpModel::new(x, &[0.0, 1.0, 0.5], hyper(1), Some(&[0.1, 0.0, 0.2])).unwrap();
        let json = serde_json::to_string(&m.to_record()).unwrap();
        let back = GpModel::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(m.predict(&[0.3]).unwrap(), back.predict(&[0.3]).unwrap());
    }
}
