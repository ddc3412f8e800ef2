use serde::{Deserialize, Serialize};

use super::config::{FirstStageConfig, GsaSettings, PipelineConfig, SecondStageConfig};
use super::first_stage::table_for;
use super::runner::run_customer;
use crate::error::{Error, Result};
use crate::grid_sim::HourlyDataset;

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvCandidate {
    pub first: FirstStageConfig,
    pub second: SecondStageConfig,
}

/// Hour ranges of one validation day, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub candidate: usize,
    pub train_start: usize,
    pub train_end: usize,
    pub valid_start: usize,
    pub valid_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub best: usize,
    pub first: FirstStageConfig,
    pub second: SecondStageConfig,
    /// Mean validation MAPE per candidate.
    pub scores: Vec<f64>,
    pub folds: Vec<Fold>,
}

/// Picks the candidate with the lowest mean MAPE over `validation_days`,
/// earlier candidates winning ties. Each validation day is forecast from
/// models trained strictly before it. Method, injection and seed come from
/// `base`; GSA is switched off.
pub fn cross_validate(
    dataset: &HourlyDataset,
    i: usize,
    grid: &[CvCandidate],
    validation_days: &[usize],
    base: &PipelineConfig,
    table_cache: Option<&std::path::Path>,
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(Error::Config("cross-validation grid is empty".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut folds = Vec::new();
    for (k, cand) in grid.iter().enumerate() {
        let config = PipelineConfig {
            first: cand.first.clone(),
            second: cand.second.clone(),
            gsa: GsaSettings {
                enabled: false,
                ..base.gsa.clone()
            },
            ..base.clone()
        };
        let table = table_for(&config.first, table_cache)?;
        let run = run_customer(dataset, i, validation_days, &config, table)?;
        scores.push(run.mean_mape());
        let history = config.history_hours();
        for &d in validation_days {
            folds.push(Fold {
                candidate: k,
                train_start: 24 * d - history,
                train_end: 24 * d,
                valid_start: 24 * d,
                valid_end: 24 * d + 24,
            });
        }
    }
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = k;
        }
    }
    Ok(CvOutcome {
        best,
        first: grid[best].first.clone(),
        second: grid[best].second.clone(),
        scores,
        folds,
    })
}
