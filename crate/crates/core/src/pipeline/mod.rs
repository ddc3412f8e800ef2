//! Two-stage forecasting protocol.
//!
//! For customer `i` the feature vector is `θ_{i,k}` for every other bus `k`
//! in increasing bus order. The first stage forecasts each feature an hour
//! ahead from windows of past angle differences; the second stage maps the
//! forecast distribution to a load distribution. Models are refit at each day
//! boundary and only read hours before the hour being forecast.

mod config;
mod cv;
mod first_stage;
mod gsa_runs;
mod runner;
mod second_stage;

pub use config::{
    FirstStageConfig, GsaSettings, InputNoiseInjection, Method, NeighborSet, NngpSettings, PipelineConfig,
    SecondStageConfig,
};
pub use cv::{cross_validate, CvCandidate, CvOutcome, Fold};
pub use first_stage::{
    block_layout, build_first_stage_training_set, components, forecast_inputs, position_of, table_for,
    window_training_set, FirstStageModels, InputForecast,
};
pub use gsa_runs::{feature_labels, hourly_labels, neighbors_from_importance, run_gsa_stage1, run_gsa_stage2};
pub use runner::{
    check_days, effective_second_stage, evaluate_records, read_forecast_csv, run_customer, write_forecast_csv,
    CustomerRun, DayForecast, DayTiming, ForecastRecord, RunManifest, RunTimings,
};
pub use second_stage::{
    baseline_gp_forecast, build_second_stage_training_set, fit_second_stage, forecast_load, LoadForecast,
    LoadModel, WarmStart,
};
