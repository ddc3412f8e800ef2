use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{FirstStageConfig, InputNoiseInjection};
use crate::error::{Error, Result};
use crate::grid_sim::HourlyDataset;
use crate::nngp::{FeatureMap, NngpModel, NonlinearityTable};

/// Buses `k ≠ i` in increasing order: the order of the angle-difference
/// feature vector for customer `i`.
pub fn components(n_buses: usize, i: usize) -> Vec<usize> {
    (0..n_buses).filter(|&k| k != i).collect()
}

/// Position of bus `k` in the feature vector of customer `i`.
pub fn position_of(i: usize, k: usize) -> usize {
    if k < i { k } else { k - 1 }
}

/// First-stage mean and variance for the feature positions in `positions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputForecast {
    pub hour: usize,
    pub positions: Vec<usize>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl InputForecast {
    pub fn new(hour: usize, positions: Vec<usize>, mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if positions.len() != mean.len() || mean.len() != variance.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len(),
                got: mean.len().min(variance.len()),
            });
        }
        if variance.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Input("input-forecast variances must be non-negative".into()));
        }
        Ok(InputForecast {
            hour,
            positions,
            mean,
            variance,
        })
    }

    /// Mean and variance restricted to `features`, in that order.
    pub fn select(&self, features: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut m = Vec::with_capacity(features.len());
        let mut v = Vec::with_capacity(features.len());
        for f in features {
            let at = self.positions.iter().position(|p| p == f).ok_or_else(|| {
                Error::Input(format!("input forecast has no component at feature position {f}"))
            })?;
            m.push(self.mean[at]);
            v.push(self.variance[at]);
        }
        Ok((m, v))
    }
}

fn check_history(first_hour: i64, h_star: usize) -> Result<()> {
    if first_hour < 0 {
        return Err(Error::InsufficientHistory {
            hour: h_star,
            needed_from: first_hour,
        });
    }
    Ok(())
}

/// Input row for hour `h`: for each block bus, `θ_{i,k}` over hours
/// `h − 24·n_in … h − 1`.
fn window_row(dataset: &HourlyDataset, i: usize, blocks: &[usize], n_in: usize, h: usize, out: &mut Vec<f64>) {
    let span = 24 * n_in;
    for &k in blocks {
        for t in h - span..h {
            out.push(dataset.theta_diff(t, i, k));
        }
    }
}

/// Training rows for hours `h_star − 24·n_t1 … h_star − 1`, with input
/// blocks for the buses in `blocks` (target first for the usual layout) and
/// the target `θ_{i,target}` as output.
pub fn window_training_set(
    dataset: &HourlyDataset,
    i: usize,
    target: usize,
    blocks: &[usize],
    h_star: usize,
    n_t1: usize,
    n_in: usize,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = dataset.n_buses();
    if i >= n || target >= n || target == i || blocks.iter().any(|&k| k >= n || k == i) {
        return Err(Error::Input(format!("invalid buses for customer {i} and component {target}")));
    }
    check_history(h_star as i64 - 24 * (n_t1 + n_in) as i64, h_star)?;
    if h_star > dataset.n_hours() {
        return Err(Error::Input(format!(
            "forecast hour {h_star} beyond the dataset ({} hours)",
            dataset.n_hours()
        )));
    }
    let rows = 24 * n_t1;
    let dim = blocks.len() * 24 * n_in;
    let mut data = Vec::with_capacity(rows * dim);
    let mut outputs = Vec::with_capacity(rows);
    for h in h_star - rows..h_star {
        window_row(dataset, i, blocks, n_in, h, &mut data);
        outputs.push(dataset.theta_diff(h, i, target));
    }
    Ok((DMatrix::from_row_slice(rows, dim, &data), outputs))
}

/// Buses whose history blocks feed the model for component `j`: `j` itself,
/// then its neighbors.
pub fn block_layout(dataset: &HourlyDataset, i: usize, j: usize, h_star: usize, config: &FirstStageConfig) -> Result<Vec<usize>> {
    let mut blocks = vec![j];
    if config.n_j == 0 {
        return Ok(blocks);
    }
    if let Some(set) = config.neighbor_indices.iter().find(|s| s.component == j) {
        if set.neighbors.contains(&i) {
            return Err(Error::Config(format!("neighbors of component {j} include the customer {i}")));
        }
        blocks.extend(&set.neighbors);
        return Ok(blocks);
    }
    blocks.extend(correlated_neighbors(dataset, i, j, h_star, config)?);
    Ok(blocks)
}

/// The `n_j` components with the largest absolute correlation with `θ_{i,j}`
/// over the training hours, ties to the lower bus.
fn correlated_neighbors(
    dataset: &HourlyDataset,
    i: usize,
    j: usize,
    h_star: usize,
    config: &FirstStageConfig,
) -> Result<Vec<usize>> {
    let start = h_star as i64 - 24 * config.n_t1 as i64;
    check_history(start, h_star)?;
    let hours: Vec<usize> = (start as usize..h_star).collect();
    let series = |k: usize| -> Vec<f64> { hours.iter().map(|&h| dataset.theta_diff(h, i, k)).collect() };
    let target = series(j);
    let corr = |a: &[f64], b: &[f64]| -> f64 {
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        if saa > 0.0 && sbb > 0.0 { (sab / (saa * sbb).sqrt()).abs() } else { 0.0 }
    };
    let mut scored: Vec<(usize, f64)> = components(dataset.n_buses(), i)
        .into_iter()
        .filter(|&k| k != j)
        .map(|k| (k, corr(&target, &series(k))))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(config.n_j).map(|(k, _)| k).collect())
}

/// Training set of the component model for `θ_{i,j}` in the configured
/// layout: `24·n_t1` rows of `(1 + n_j)·24·n_in` inputs.
pub fn build_first_stage_training_set(
    dataset: &HourlyDataset,
    i: usize,
    j: usize,
    h_star: usize,
    config: &FirstStageConfig,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    config.validate(dataset.n_buses())?;
    let blocks = block_layout(dataset, i, j, h_star, config)?;
    window_training_set(dataset, i, j, &blocks, h_star, config.n_t1, config.n_in)
}

#[derive(Debug, Clone)]
struct ComponentModel {
    position: usize,
    blocks: Vec<usize>,
    model: NngpModel,
    /// Standard deviation of the target over the training window.
    spread: f64,
}

/// Component models of one customer fitted at a day boundary.
#[derive(Debug, Clone)]
pub struct FirstStageModels {
    customer: usize,
    n_in: usize,
    models: Vec<ComponentModel>,
}

/// The nonlinearity table a first-stage configuration needs, if any.
pub fn table_for(config: &FirstStageConfig, cache_dir: Option<&std::path::Path>) -> Result<Option<Arc<NonlinearityTable>>> {
    if !config.nngp.needs_table() {
        return Ok(None);
    }
    crate::nngp::load_or_build_table(config.nngp.nonlinearity, config.nngp.table, cache_dir).map(Some)
}

impl FirstStageModels {
    /// Fits one model per feature position in `positions`, using data before
    /// `h_star` only. Fits run in parallel; a failure names its component.
    pub fn fit(
        dataset: &HourlyDataset,
        i: usize,
        h_star: usize,
        config: &FirstStageConfig,
        positions: &[usize],
        table: Option<Arc<NonlinearityTable>>,
    ) -> Result<Self> {
        config.validate(dataset.n_buses())?;
        let comps = components(dataset.n_buses(), i);
        let nngp = config.nngp.to_config(config.input_dim());
        let models = positions
            .par_iter()
            .map(|&p| {
                let j = *comps.get(p).ok_or_else(|| Error::Input(format!("no feature position {p}")))?;
                let fit = || -> Result<ComponentModel> {
                    let blocks = block_layout(dataset, i, j, h_star, config)?;
                    let (x, y) = window_training_set(dataset, i, j, &blocks, h_star, config.n_t1, config.n_in)?;
                    let spread = crate::linalg::sample_variance(&y).sqrt();
                    let model = NngpModel::fit(&x, &y, &nngp, table.clone(), FeatureMap::Standardize)?;
                    Ok(ComponentModel {
                        position: p,
                        blocks,
                        model,
                        spread,
                    })
                };
                fit().map_err(|e| e.in_component(j))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FirstStageModels {
            customer: i,
            n_in: config.n_in,
            models,
        })
    }

    pub fn customer(&self) -> usize {
        self.customer
    }

    pub fn positions(&self) -> Vec<usize> {
        self.models.iter().map(|m| m.position).collect()
    }

    /// History buses of the model at feature position `p`.
    pub fn blocks(&self, p: usize) -> Option<&[usize]> {
        self.models.iter().find(|m| m.position == p).map(|m| m.blocks.as_slice())
    }

    /// Hour-ahead forecast for hour `h`, reading only hours before `h`. The
    /// variance includes the observation noise.
    pub fn forecast(&self, dataset: &HourlyDataset, h: usize) -> Result<InputForecast> {
        check_history(h as i64 - 24 * self.n_in as i64, h)?;
        let mut mean = Vec::with_capacity(self.models.len());
        let mut variance = Vec::with_capacity(self.models.len());
        for m in &self.models {
            let mut row = Vec::with_capacity(m.model.input_dim());
            window_row(dataset, self.customer, &m.blocks, self.n_in, h, &mut row);
            let (mu, var) = m.model.predict(&row).map_err(|e| e.in_component(m.blocks[0]))?;
            mean.push(mu);
            variance.push(var + m.model.noise_variance());
        }
        InputForecast::new(h, self.positions(), mean, variance)
    }

    /// Adds the configured perturbation for hour `h`. The draws depend only
    /// on `(seed, customer, hour)` and the feature position, so both
    /// second-stage methods see the same perturbed inputs.
    pub fn inject(&self, forecast: &mut InputForecast, injection: &InputNoiseInjection, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((self.customer as u64) << 40) | forecast.hour as u64);
        let width = forecast.positions.iter().max().map_or(0, |p| p + 1);
        let draws: Vec<f64> = (0..width).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (k, m) in self.models.iter().enumerate() {
            let sd = injection.relative_std * m.spread;
            forecast.mean[k] += sd * draws[m.position];
            forecast.variance[k] += sd * sd;
        }
    }
}

/// Fits every component model at `h_star` and forecasts that hour.
pub fn forecast_inputs(
    dataset: &HourlyDataset,
    i: usize,
    h_star: usize,
    config: &FirstStageConfig,
    table: Option<Arc<NonlinearityTable>>,
) -> Result<InputForecast> {
    let all: Vec<usize> = (0..dataset.n_buses() - 1).collect();
    FirstStageModels::fit(dataset, i, h_star, config, &all, table)?.forecast(dataset, h_star)
}
