use std::sync::Arc;

use super::config::{FirstStageConfig, GsaSettings, Method, SecondStageConfig};
use super::first_stage::{components, window_training_set};
use super::second_stage::{fit_second_stage, LoadModel};
use crate::error::Result;
use crate::grid_sim::HourlyDataset;
use crate::gsa::{
    decompose, first_stage_importance, fit_sampler, generate_matrices, select_features, ComponentTarget,
    SensitivityReport, SobolEstimator,
};
use crate::nngp::{FeatureMap, NngpModel, NonlinearityTable};

/// Decomposes the training inputs, fits the coefficient mixture and returns
/// total indices of `surrogate` over the reconstructed inputs.
fn sensitivity<S: crate::gsa::Surrogate>(
    surrogate: &S,
    training_inputs: &nalgebra::DMatrix<f64>,
    samples: usize,
    mixture_components: usize,
    seed: u64,
) -> Result<SensitivityReport> {
    let decomp = decompose(training_inputs, ComponentTarget::default())?;
    let sampler = fit_sampler(&decomp, mixture_components, seed)?;
    let matrices = generate_matrices(&sampler, &decomp, samples, seed)?;
    SobolEstimator::new(surrogate, &matrices, false)?.report()
}

/// First-stage analysis for component `j` of customer `i`: a deep-kernel
/// model on one day of history for every component, blocks in feature
/// order. The report covers `24·(N − 1)` inputs with one block importance
/// per component.
pub fn run_gsa_stage1(
    dataset: &HourlyDataset,
    i: usize,
    j: usize,
    h_star: usize,
    config: &FirstStageConfig,
    settings: &GsaSettings,
    table: Option<Arc<NonlinearityTable>>,
    seed: u64,
) -> Result<SensitivityReport> {
    let blocks = components(dataset.n_buses(), i);
    let (x, y) = window_training_set(dataset, i, j, &blocks, h_star, config.n_t1, 1)?;
    let nngp = config.nngp.to_config(x.ncols());
    let model = NngpModel::fit(&x, &y, &nngp, table, FeatureMap::Standardize)?;
    let mut report = sensitivity(&model, &x, settings.stage1_samples, settings.mixture_components, seed)?;
    report.aggregates = Some(first_stage_importance(&report.total_indices)?);
    Ok(report)
}

/// Second-stage analysis: the noisy-input model on all `N − 1` features.
pub fn run_gsa_stage2(
    dataset: &HourlyDataset,
    i: usize,
    h_star: usize,
    config: &SecondStageConfig,
    settings: &GsaSettings,
    seed: u64,
) -> Result<SensitivityReport> {
    let full = SecondStageConfig {
        selected_features: None,
        ..config.clone()
    };
    let model = match fit_second_stage(dataset, i, h_star, &full, Method::NngpNigp, None)? {
        LoadModel::Nigp(m) => m,
        LoadModel::Baseline(_) => unreachable!("noisy-input method requested"),
    };
    let x = model.base().inputs().clone();
    sensitivity(&model, &x, settings.stage2_samples, settings.mixture_components, seed)
}

/// Neighbor buses for component `j` from block importances: the `n_j`
/// largest, skipping `j` itself.
pub fn neighbors_from_importance(n_buses: usize, i: usize, j: usize, importance: &[f64], n_j: usize) -> Result<Vec<usize>> {
    let comps = components(n_buses, i);
    let ranked = select_features(importance, importance.len())?;
    Ok(ranked
        .into_iter()
        .map(|p| comps[p])
        .filter(|&k| k != j)
        .take(n_j)
        .collect())
}

/// Feature-name labels `theta_i_k` in feature order.
pub fn feature_labels(n_buses: usize, i: usize) -> Vec<String> {
    components(n_buses, i)
        .into_iter()
        .map(|k| format!("theta_{i}_{k}"))
        .collect()
}

/// Labels for the hourly first-stage inputs: `theta_i_k@-lag`.
pub fn hourly_labels(n_buses: usize, i: usize) -> Vec<String> {
    components(n_buses, i)
        .into_iter()
        .flat_map(|k| (0..24).map(move |t| format!("theta_{i}_{k}@-{}", 24 - t)))
        .collect()
}
