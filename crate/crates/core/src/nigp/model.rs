use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit_impl, FitOptions, GpModel, MleFit, NoiseBasis, SeHyperParams};

/// Diagonal input-noise covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNoiseSpec {
    variances: Vec<f64>,
}

impl InputNoiseSpec {
    pub fn new(variances: Vec<f64>) -> Result<Self> {
        if variances.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Input("input-noise variances must be finite and non-negative".into()));
        }
        Ok(InputNoiseSpec { variances })
    }

    pub fn zeros(dim: usize) -> Self {
        InputNoiseSpec {
            variances: vec![0.0; dim],
        }
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn is_zero(&self) -> bool {
        self.variances.iter().all(|v| *v == 0.0)
    }
}

/// Settings for [`fit_nigp_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NigpFitOptions {
    /// Number of gradient/refit rounds, between 1 and 5.
    pub iterations: usize,
    pub optimizer: FitOptions,
    /// Skip the input-noise estimate entirely (plain GP fit).
    pub zero_input_noise: bool,
}

impl Default for NigpFitOptions {
    fn default() -> Self {
        NigpFitOptions {
            iterations: 2,
            optimizer: FitOptions::default(),
            zero_input_noise: false,
        }
    }
}

/// Trained noisy-input GP.
///
/// The wrapped [`GpModel`] carries the correction
/// `diag(Δf̄ Σ_x Δf̄ᵀ)` on its noise diagonal, where `Δf̄` holds the
/// posterior-mean gradients at the training inputs.
#[derive(Debug)]
pub struct NigpModel {
    pub(crate) base: GpModel,
    input_noise: InputNoiseSpec,
    gradients: DMatrix<f64>,
    noise_capped: bool,
    pub(crate) inverse: Arc<DMatrix<f64>>,
    pub(crate) clamp_count: AtomicUsize,
}

impl Clone for NigpModel {
    fn clone(&self) -> Self {
        NigpModel {
            base: self.base.clone(),
            input_noise: self.input_noise.clone(),
            gradients: self.gradients.clone(),
            noise_capped: self.noise_capped,
            inverse: Arc::clone(&self.inverse),
            clamp_count: AtomicUsize::new(self.clamp_count.load(Ordering::Relaxed)),
        }
    }
}

/// `diag(Δ Σ Δᵀ)` for diagonal `Σ`.
fn correction_diag(gradients: &DMatrix<f64>, noise: &[f64]) -> Vec<f64> {
    gradients
        .row_iter()
        .map(|g| g.iter().zip(noise).map(|(d, s)| d * d * s).sum())
        .collect()
}

impl NigpModel {
    /// Assembles a model from fixed hyperparameters, training input noise and
    /// gradients.
    pub fn from_parts(
        x: DMatrix<f64>,
        y: &[f64],
        hyper: SeHyperParams,
        input_noise: InputNoiseSpec,
        gradients: DMatrix<f64>,
    ) -> Result<Self> {
        if input_noise.variances().len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: input_noise.variances().len(),
            });
        }
        if gradients.shape() != x.shape() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: gradients.nrows(),
            });
        }
        let correction = if input_noise.is_zero() {
            None
        } else {
            Some(correction_diag(&gradients, input_noise.variances()))
        };
        let base = GpModel::new(x, y, hyper, correction.as_deref())?;
        let inverse = Arc::new(base.inverse_covariance());
        Ok(NigpModel {
            base,
            input_noise,
            gradients,
            noise_capped: false,
            inverse,
            clamp_count: AtomicUsize::new(0),
        })
    }

    /// Wraps a plain GP as a noisy-input model with zero training input noise.
    pub fn from_gp(base: GpModel) -> Self {
        let gradients = base.training_gradients();
        let inverse = Arc::new(base.inverse_covariance());
        NigpModel {
            input_noise: InputNoiseSpec::zeros(base.dim()),
            base,
            gradients,
            noise_capped: false,
            inverse,
            clamp_count: AtomicUsize::new(0),
        }
    }

    pub fn base(&self) -> &GpModel {
        &self.base
    }

    pub fn hyper(&self) -> &SeHyperParams {
        self.base.hyper()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn input_noise(&self) -> &InputNoiseSpec {
        &self.input_noise
    }

    /// Posterior-mean gradients at the training inputs used for the
    /// correction, one row per training point.
    pub fn gradients(&self) -> &DMatrix<f64> {
        &self.gradients
    }

    /// Per-point noise-diagonal correction (zeros when no input noise).
    pub fn correction(&self) -> Vec<f64> {
        self.base
            .correction()
            .map_or_else(|| vec![0.0; self.base.n_train()], |c| c.to_vec())
    }

    /// Whether the input-noise estimate hit its cap of ten times the input
    /// variance.
    pub fn noise_capped(&self) -> bool {
        self.noise_capped
    }

    /// Number of stochastic predictions whose slightly negative variance was
    /// clamped to zero.
    pub fn clamp_count(&self) -> usize {
        self.clamp_count.load(Ordering::Relaxed)
    }

    /// Posterior mean and latent variance at a noise-free test input, using
    /// the corrected training covariance.
    pub fn predict_deterministic(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.base.predict(x)
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.base.predict_mean(x)
    }
}

/// Fits with default options and the given number of refit rounds.
pub fn fit_nigp(x: &DMatrix<f64>, y: &[f64], iterations: usize) -> Result<NigpModel> {
    let opts = NigpFitOptions {
        iterations,
        ..Default::default()
    };
    fit_nigp_with(x, y, None, None, &opts)
}

/// Fixed-point fit: a plain GP gives the first posterior-mean gradients; each
/// round then maximizes the likelihood jointly over the kernel
/// hyperparameters and the diagonal input noise `Σ_x` (gradients held fixed)
/// and recomputes the gradients from the refitted model.
///
/// `init` and `init_noise` seed the optimizer (warm starts across refits).
pub fn fit_nigp_with(
    x: &DMatrix<f64>,
    y: &[f64],
    init: Option<&SeHyperParams>,
    init_noise: Option<&[f64]>,
    opts: &NigpFitOptions,
) -> Result<NigpModel> {
    if !(1..=5).contains(&opts.iterations) {
        return Err(Error::Config(format!(
            "NIGP iterations must be in [1, 5], got {}",
            opts.iterations
        )));
    }
    let n = x.nrows();
    let d = x.ncols();
    if n < 2 || y.len() != n {
        return Err(Error::Input(format!("need at least 2 matching rows, got {n} and {}", y.len())));
    }
    let default_init = || -> Result<SeHyperParams> {
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let var = if var > 1e-24 { var } else { 1.0 };
        let scales = (0..d)
            .map(|k| {
                let col = x.column(k);
                let m = col.mean();
                let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n as f64;
                if v > 1e-12 { v } else { 1.0 }
            })
            .collect();
        SeHyperParams::new(var, scales, 0.1 * var)
    };
    let init = match init {
        Some(h) => h.clone(),
        None => default_init()?,
    };

    let plain = fit_impl(x, y, &init, None, None, &opts.optimizer)?;
    let mut model = GpModel::new(x.clone(), y, plain.hyper.clone(), None)?;
    if opts.zero_input_noise {
        return Ok(NigpModel::from_gp(model));
    }

    let mut hyper = plain.hyper;
    let cold = init_noise.is_none();
    let mut noise: Vec<f64> = match init_noise {
        Some(s) if s.len() == d => s.to_vec(),
        Some(s) => return Err(Error::DimensionMismatch { expected: d, got: s.len() }),
        None => vec![0.0; d],
    };
    let mut gradients = model.training_gradients();
    // Near zero the likelihood is flat in log input noise, so a cold start
    // also tries letting the inputs explain half of the fitted output noise.
    let split: Vec<f64> = (0..d)
        .map(|k| {
            let g2 = gradients.column(k).iter().map(|g| g * g).sum::<f64>() / n as f64;
            if g2 > 0.0 { 0.5 * hyper.noise_var / (d as f64 * g2) } else { 0.0 }
        })
        .collect();
    let mut capped = false;
    // Refit rounds start from the current estimate only; the multistart
    // search already happened in the plain fit.
    let round_opts = FitOptions {
        restarts: 1,
        ..opts.optimizer.clone()
    };
    for round in 0..opts.iterations {
        let basis = gradients.map(|g| g * g);
        let mut seeds = vec![noise.iter().map(|s| s.max(1e-12)).collect::<Vec<f64>>()];
        if cold && round == 0 && split.iter().any(|s| *s > 0.0) {
            seeds.push(split.clone());
        }
        let mut best: Option<MleFit> = None;
        for seed in &seeds {
            let fit = fit_impl(
                x,
                y,
                &hyper,
                None,
                Some(NoiseBasis {
                    basis: &basis,
                    init: seed,
                }),
                &round_opts,
            )?;
            if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
                best = Some(fit);
            }
        }
        let fit = best.expect("at least one seed");
        hyper = fit.hyper;
        noise = fit.input_noise;
        capped = fit.input_noise_capped;
        let correction = correction_diag(&gradients, &noise);
        model = GpModel::new(x.clone(), y, hyper.clone(), Some(&correction))?;
        let next = model.training_gradients();
        gradients = next;
    }
    if capped {
        log::warn!("input-noise estimate reached its cap of 10x the input variance");
    }
    // The returned model uses the gradients from the final refit so that the
    // stored correction is consistent with them.
    let mut out = NigpModel::from_parts(x.clone(), y, hyper, InputNoiseSpec::new(noise)?, gradients)?;
    out.noise_capped = capped;
    Ok(out)
}
