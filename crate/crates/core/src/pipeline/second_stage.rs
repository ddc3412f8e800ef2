use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{Method, SecondStageConfig};
use super::first_stage::{components, InputForecast};
use crate::error::{Error, Result};
use crate::gp::{fit_mle_with, GpModel, SeHyperParams};
use crate::grid_sim::HourlyDataset;
use crate::nigp::{fit_nigp_with, predictive_interval, NigpModel, StochasticTestInput};

/// Point and interval load forecast for one customer and hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadForecast {
    pub customer: usize,
    pub hour: usize,
    pub point: f64,
    /// Predictive variance of the observed load (latent plus noise).
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Rows pair the contemporaneous angle differences at the selected feature
/// positions with the customer's load, over the `24·n_t2` hours before
/// `h_star`.
pub fn build_second_stage_training_set(
    dataset: &HourlyDataset,
    i: usize,
    h_star: usize,
    config: &SecondStageConfig,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    config.validate(dataset.n_buses())?;
    let rows = config.history_hours();
    if h_star < rows {
        return Err(Error::InsufficientHistory {
            hour: h_star,
            needed_from: h_star as i64 - rows as i64,
        });
    }
    if h_star > dataset.n_hours() {
        return Err(Error::Input(format!("forecast hour {h_star} beyond the dataset")));
    }
    let comps = components(dataset.n_buses(), i);
    let features = config.features(dataset.n_buses());
    let mut data = Vec::with_capacity(rows * features.len());
    let mut loads = Vec::with_capacity(rows);
    for h in h_star - rows..h_star {
        for &p in &features {
            data.push(dataset.theta_diff(h, i, comps[p]));
        }
        loads.push(dataset.load(h, i));
    }
    Ok((DMatrix::from_row_slice(rows, features.len(), &data), loads))
}

/// Previous fit used to seed the next day's optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub hyper: SeHyperParams,
    pub input_noise: Vec<f64>,
}

/// Trained second-stage model of either method.
#[derive(Debug, Clone)]
pub enum LoadModel {
    Nigp(NigpModel),
    Baseline(GpModel),
}

impl LoadModel {
    pub fn hyper(&self) -> &SeHyperParams {
        match self {
            LoadModel::Nigp(m) => m.hyper(),
            LoadModel::Baseline(m) => m.hyper(),
        }
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            hyper: self.hyper().clone(),
            input_noise: match self {
                LoadModel::Nigp(m) => m.input_noise().variances().to_vec(),
                LoadModel::Baseline(m) => vec![0.0; m.dim()],
            },
        }
    }

    pub fn forecast(&self, input: &InputForecast, config: &SecondStageConfig, customer: usize, n_buses: usize) -> Result<LoadForecast> {
        match self {
            LoadModel::Nigp(m) => forecast_load(m, input, config, customer, n_buses),
            LoadModel::Baseline(m) => baseline_gp_forecast(m, input, config, customer, n_buses),
        }
    }
}

/// Fits the second-stage model on data before `h_star`. With a warm start
/// the optimizer runs from the previous estimate alone.
pub fn fit_second_stage(
    dataset: &HourlyDataset,
    i: usize,
    h_star: usize,
    config: &SecondStageConfig,
    method: Method,
    warm: Option<&WarmStart>,
) -> Result<LoadModel> {
    let (x, y) = build_second_stage_training_set(dataset, i, h_star, config)?;
    let mut opts = config.fit.clone();
    let warm = warm.filter(|w| config.warm_start && w.hyper.dim() == x.ncols());
    if warm.is_some() {
        opts.optimizer.restarts = 1;
    }
    match method {
        Method::NngpNigp => {
            let noise = warm.map(|w| w.input_noise.as_slice());
            fit_nigp_with(&x, &y, warm.map(|w| &w.hyper), noise, &opts).map(LoadModel::Nigp)
        }
        Method::BaselineGp => {
            let init = match warm {
                Some(w) => w.hyper.clone(),
                None => default_hyper(&x, &y)?,
            };
            let fit = fit_mle_with(&x, &y, &init, None, &opts.optimizer)?;
            GpModel::new(x, &y, fit.hyper, None).map(LoadModel::Baseline)
        }
    }
}

/// Output variance, per-input variances and a tenth of the output variance
/// as noise; the same starting point the noisy-input fit uses.
fn default_hyper(x: &DMatrix<f64>, y: &[f64]) -> Result<SeHyperParams> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let var = if var > 1e-24 { var } else { 1.0 };
    let (_, sd) = crate::linalg::column_moments(x);
    let scales = sd.iter().map(|s| if s * s > 1e-12 { s * s } else { 1.0 }).collect();
    SeHyperParams::new(var, scales, 0.1 * var)
}

fn assemble(customer: usize, hour: usize, mean: f64, variance: f64, level: f64) -> Result<LoadForecast> {
    let (lower, upper) = predictive_interval(mean, variance, level)?;
    Ok(LoadForecast {
        customer,
        hour,
        point: mean,
        variance,
        lower,
        upper,
    })
}

fn model_features(config: &SecondStageConfig, dim: usize, n_buses: usize) -> Result<Vec<usize>> {
    let features = config.features(n_buses);
    if features.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: features.len(),
        });
    }
    Ok(features)
}

/// Stochastic prediction at `x ~ N(μ₁, diag(V₁))` restricted to the selected
/// features. The interval uses the latent variance plus the fitted output
/// noise.
pub fn forecast_load(
    model: &NigpModel,
    input: &InputForecast,
    config: &SecondStageConfig,
    customer: usize,
    n_buses: usize,
) -> Result<LoadForecast> {
    let features = model_features(config, model.dim(), n_buses)?;
    let (mean, var) = input.select(&features)?;
    let test = StochasticTestInput::new(mean, var)?;
    let pred = model.predict_stochastic(&test)?;
    let total = pred.variance + model.hyper().noise_var;
    assemble(customer, input.hour, pred.mean, total, config.interval_level)
}

/// Standard GP evaluated at the first-stage mean, ignoring its variance.
pub fn baseline_gp_forecast(
    model: &GpModel,
    input: &InputForecast,
    config: &SecondStageConfig,
    customer: usize,
    n_buses: usize,
) -> Result<LoadForecast> {
    let features = model_features(config, model.dim(), n_buses)?;
    let (mean, _) = input.select(&features)?;
    let (m, v) = model.predict(&mean)?;
    assemble(customer, input.hour, m, v + model.hyper().noise_var, config.interval_level)
}
