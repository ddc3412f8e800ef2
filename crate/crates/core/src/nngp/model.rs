use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::NngpConfig;
use super::kernel::{scale_to_constant_norm, NngpKernel};
use super::table::NonlinearityTable;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, Factor};

/// How raw feature vectors are turned into kernel inputs before the
/// constant-norm scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// Standardize each feature on the training set and append a constant
    /// coordinate of size `√d` before scaling. The extra coordinate keeps the
    /// overall magnitude visible to the kernel after normalization and makes
    /// zero rows impossible.
    #[default]
    Standardize,
    /// Only scale each raw vector to squared norm `d`.
    NormOnly,
}

/// GP regression with the deep-network kernel.
///
/// Outputs are standardized internally; `obs_noise` in the configuration is
/// relative to the training output variance.
#[derive(Debug, Clone)]
pub struct NngpModel {
    kernel: NngpKernel,
    feature_map: FeatureMap,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    train: DMatrix<f64>,
    y_mean: f64,
    y_scale: f64,
    alpha: DVector<f64>,
    factor: Factor,
    prior_var: f64,
}

impl NngpModel {
    /// Fits on `inputs` (`n × config.input_dim`) and `outputs`.
    pub fn fit(
        inputs: &DMatrix<f64>,
        outputs: &[f64],
        config: &NngpConfig,
        table: Option<Arc<NonlinearityTable>>,
        feature_map: FeatureMap,
    ) -> Result<Self> {
        config.validate()?;
        let n = inputs.nrows();
        if inputs.ncols() != config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: config.input_dim,
                got: inputs.ncols(),
            });
        }
        if outputs.len() != n || n == 0 {
            return Err(Error::Input(format!(
                "need matching non-empty inputs ({n} rows) and outputs ({})",
                outputs.len()
            )));
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("training outputs contain non-finite values".into()));
        }

        let (feature_mean, feature_scale) = match feature_map {
            FeatureMap::Standardize => {
                let (m, s) = crate::linalg::column_moments(inputs);
                let s = s.into_iter().map(|v| if v > 1e-12 { v } else { 1.0 }).collect();
                (m, s)
            }
            FeatureMap::NormOnly => (vec![0.0; inputs.ncols()], vec![1.0; inputs.ncols()]),
        };
        let mut kernel_config = config.clone();
        kernel_config.input_dim = mapped_dim(feature_map, config.input_dim);
        let kernel = NngpKernel::new(kernel_config, table)?;

        let mapped = map_rows(inputs, feature_map, &feature_mean, &feature_scale);
        let (train, _) = scale_to_constant_norm(&mapped)?;
        let mut gram = kernel.cross_matrix(&train, &train)?;
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (gram[(i, j)] + gram[(j, i)]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }

        let y_mean = outputs.iter().sum::<f64>() / n as f64;
        let var = outputs.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
        let noise = config.obs_noise;
        for i in 0..n {
            gram[(i, i)] += noise;
        }
        let factor = cholesky_jittered(gram)?;
        let y = DVector::from_iterator(n, outputs.iter().map(|v| (v - y_mean) / y_scale));
        let alpha = factor.solve(&y);
        let prior_var = kernel.prior_variance()?;
        Ok(NngpModel {
            kernel,
            feature_map,
            feature_mean,
            feature_scale,
            train,
            y_mean,
            y_scale,
            alpha,
            factor,
            prior_var,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn kernel(&self) -> &NngpKernel {
        &self.kernel
    }

    /// Jitter that was needed to factorize the training covariance.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// Prior variance of the latent function in output units.
    pub fn prior_variance(&self) -> f64 {
        self.prior_var * self.y_scale * self.y_scale
    }

    /// Observation noise variance in output units.
    pub fn noise_variance(&self) -> f64 {
        self.kernel.config().obs_noise * self.y_scale * self.y_scale
    }

    fn prepare(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mapped = map_rows(x, self.feature_map, &self.feature_mean, &self.feature_scale);
        Ok(scale_to_constant_norm(&mapped)?.0)
    }

    /// Posterior mean and latent variance (clamped at zero) for each row.
    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
        let test = self.prepare(x)?;
        let cross = self.kernel.cross_matrix(&test, &self.train)?;
        let mut out = Vec::with_capacity(test.nrows());
        for r in 0..test.nrows() {
            let k = cross.row(r).transpose();
            let mean = k.dot(&self.alpha);
            let v = self.factor.solve_lower(&k);
            let var = (self.prior_var - v.norm_squared()).max(0.0);
            out.push((
                self.y_mean + self.y_scale * mean,
                var * self.y_scale * self.y_scale,
            ));
        }
        Ok(out)
    }

    /// Posterior mean only; avoids the triangular solves.
    pub fn predict_mean_batch(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let test = self.prepare(x)?;
        let cross = self.kernel.cross_matrix(&test, &self.train)?;
        Ok((cross * &self.alpha)
            .iter()
            .map(|m| self.y_mean + self.y_scale * m)
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let m = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.predict_batch(&m)?[0])
    }
}

fn mapped_dim(map: FeatureMap, d: usize) -> usize {
    match map {
        FeatureMap::Standardize => d + 1,
        FeatureMap::NormOnly => d,
    }
}

fn map_rows(x: &DMatrix<f64>, map: FeatureMap, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    let d = x.ncols();
    match map {
        FeatureMap::NormOnly => x.clone(),
        FeatureMap::Standardize => {
            let anchor = (d as f64).sqrt();
            DMatrix::from_fn(x.nrows(), d + 1, |r, c| {
                if c < d {
                    (x[(r, c)] - mean[c]) / scale[c]
                } else {
                    anchor
                }
            })
        }
    }
}
