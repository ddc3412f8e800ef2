use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Method, NeighborSet, PipelineConfig, SecondStageConfig};
use super::first_stage::{components, FirstStageModels};
use super::gsa_runs::{neighbors_from_importance, run_gsa_stage1, run_gsa_stage2};
use super::second_stage::{fit_second_stage, LoadForecast, WarmStart};
use crate::error::{Error, Result};
use crate::grid_sim::HourlyDataset;
use crate::gsa::select_features;
use crate::metrics::DayEvaluation;
use crate::nngp::NonlinearityTable;

/// Wall-clock seconds spent on one prediction day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DayTiming {
    pub first_stage_s: f64,
    pub second_stage_s: f64,
}

impl DayTiming {
    pub fn total(&self) -> f64 {
        self.first_stage_s + self.second_stage_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayForecast {
    pub day: usize,
    pub forecasts: Vec<LoadForecast>,
    pub actuals: Vec<f64>,
    pub evaluation: DayEvaluation,
    pub timing: DayTiming,
}

/// Everything produced for one customer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerRun {
    pub customer: usize,
    pub method: Method,
    /// Feature positions fed to the second stage.
    pub features: Vec<usize>,
    pub neighbors: Vec<NeighborSet>,
    pub gsa_s: f64,
    /// Second-stage total indices when GSA ran.
    pub stage2_indices: Option<Vec<f64>>,
    pub days: Vec<DayForecast>,
}

impl CustomerRun {
    pub fn mean_mape(&self) -> f64 {
        self.days.iter().map(|d| d.evaluation.mape).sum::<f64>() / self.days.len().max(1) as f64
    }

    pub fn mean_cp(&self) -> f64 {
        self.days.iter().map(|d| d.evaluation.cp).sum::<f64>() / self.days.len().max(1) as f64
    }

    pub fn mean_day_seconds(&self) -> f64 {
        self.days.iter().map(|d| d.timing.total()).sum::<f64>() / self.days.len().max(1) as f64
    }
}

/// Checks that every requested day can be forecast from the dataset.
pub fn check_days(dataset: &HourlyDataset, days: &[usize], config: &PipelineConfig) -> Result<()> {
    if days.is_empty() {
        return Err(Error::Config("no prediction days requested".into()));
    }
    let need = config.history_hours();
    for &d in days {
        if 24 * d < need {
            return Err(Error::Config(format!(
                "day {d} starts at hour {} but {need} hours of history are needed (n_t1 = {}, n_in = {}, n_t2 = {})",
                24 * d,
                config.first.n_t1,
                config.first.n_in,
                config.second.n_t2
            )));
        }
        if 24 * (d + 1) > dataset.n_hours() {
            return Err(Error::Config(format!(
                "day {d} is beyond the dataset ({} days)",
                dataset.n_hours() / 24
            )));
        }
    }
    Ok(())
}

/// Runs the two-stage protocol for customer `i` over `days` (in order).
///
/// Models are refit at each day boundary from data before it and produce 24
/// hour-ahead forecasts. With GSA enabled, the second-stage feature set (and
/// optionally the first-stage neighbors) is chosen once, at the first day,
/// and kept for the rest of the run.
pub fn run_customer(
    dataset: &HourlyDataset,
    i: usize,
    days: &[usize],
    config: &PipelineConfig,
    table: Option<Arc<NonlinearityTable>>,
) -> Result<CustomerRun> {
    let n = dataset.n_buses();
    if i >= n {
        return Err(Error::Config(format!("customer {i} out of range for {n} buses")));
    }
    config.validate(n)?;
    check_days(dataset, days, config)?;

    let mut first = config.first.clone();
    let mut second = config.second.clone();
    let mut gsa_s = 0.0;
    let mut stage2_indices = None;
    if config.gsa.enabled {
        let start = Instant::now();
        let h0 = 24 * days[0];
        let report = run_gsa_stage2(dataset, i, h0, &second, &config.gsa, config.seed)?;
        let selected = select_features(&report.total_indices, config.gsa.top_k)?;
        log::info!("customer {i}: second-stage features {selected:?} from indices {:?}", report.total_indices);
        stage2_indices = Some(report.total_indices);
        if config.gsa.select_neighbors && first.n_j > 0 {
            let comps = components(n, i);
            for &p in &selected {
                let j = comps[p];
                let r1 = run_gsa_stage1(dataset, i, j, h0, &first, &config.gsa, table.clone(), config.seed)?;
                let h = r1.aggregates.as_ref().expect("stage-1 report has aggregates");
                let neighbors = neighbors_from_importance(n, i, j, h, first.n_j)?;
                first.neighbor_indices.retain(|s| s.component != j);
                first.neighbor_indices.push(NeighborSet { component: j, neighbors });
            }
        }
        second.selected_features = Some(selected);
        gsa_s = start.elapsed().as_secs_f64();
    }
    let features = second.features(n);

    let mut warm: Option<WarmStart> = None;
    let mut out = Vec::with_capacity(days.len());
    for &day in days {
        let h0 = 24 * day;
        let t0 = Instant::now();
        let stage1 = FirstStageModels::fit(dataset, i, h0, &first, &features, table.clone())?;
        let mut inputs = Vec::with_capacity(24);
        for h in h0..h0 + 24 {
            let mut f = stage1.forecast(dataset, h)?;
            if let Some(inj) = &config.injection {
                stage1.inject(&mut f, inj, config.seed);
            }
            inputs.push(f);
        }
        let first_stage_s = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let model = fit_second_stage(dataset, i, h0, &second, config.method, warm.as_ref())?;
        let forecasts = inputs
            .iter()
            .map(|f| model.forecast(f, &second, i, n))
            .collect::<Result<Vec<_>>>()?;
        let second_stage_s = t1.elapsed().as_secs_f64();
        warm = Some(model.warm_start());

        let actuals: Vec<f64> = (h0..h0 + 24).map(|h| dataset.load(h, i)).collect();
        let points: Vec<f64> = forecasts.iter().map(|f| f.point).collect();
        let intervals: Vec<(f64, f64)> = forecasts.iter().map(|f| (f.lower, f.upper)).collect();
        let evaluation = DayEvaluation::new(i, day, &actuals, &points, &intervals)?;
        log::debug!(
            "customer {i} day {day}: mape {:.4} cp {:.3} ({:.2}s + {:.2}s)",
            evaluation.mape,
            evaluation.cp,
            first_stage_s,
            second_stage_s
        );
        out.push(DayForecast {
            day,
            forecasts,
            actuals,
            evaluation,
            timing: DayTiming {
                first_stage_s,
                second_stage_s,
            },
        });
    }
    Ok(CustomerRun {
        customer: i,
        method: config.method,
        features,
        neighbors: first.neighbor_indices,
        gsa_s,
        stage2_indices,
        days: out,
    })
}

/// Writes `customer,day,hour,actual,point,lower,upper`, hour within the day.
pub fn write_forecast_csv<W: Write>(writer: W, runs: &[CustomerRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["customer", "day", "hour", "actual", "point", "lower", "upper"])?;
    for run in runs {
        for d in &run.days {
            for (k, (f, a)) in d.forecasts.iter().zip(&d.actuals).enumerate() {
                w.write_record([
                    run.customer.to_string(),
                    d.day.to_string(),
                    k.to_string(),
                    format!("{a:.12e}"),
                    format!("{:.12e}", f.point),
                    format!("{:.12e}", f.lower),
                    format!("{:.12e}", f.upper),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of a forecast CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub customer: usize,
    pub day: usize,
    pub hour: usize,
    pub actual: f64,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn read_forecast_csv<R: std::io::Read>(reader: R) -> Result<Vec<ForecastRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let expected = ["customer", "day", "hour", "actual", "point", "lower", "upper"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse(format!("unexpected forecast CSV header {headers:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Per-day evaluations regrouped from forecast records, ordered by
/// `(customer, day)`.
pub fn evaluate_records(records: &[ForecastRecord]) -> Result<Vec<DayEvaluation>> {
    let mut groups: std::collections::BTreeMap<(usize, usize), Vec<&ForecastRecord>> = Default::default();
    for r in records {
        groups.entry((r.customer, r.day)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((c, d), mut rows)| {
            rows.sort_by_key(|r| r.hour);
            let actuals: Vec<f64> = rows.iter().map(|r| r.actual).collect();
            let points: Vec<f64> = rows.iter().map(|r| r.point).collect();
            let intervals: Vec<(f64, f64)> = rows.iter().map(|r| (r.lower, r.upper)).collect();
            DayEvaluation::new(c, d, &actuals, &points, &intervals)
        })
        .collect()
}

/// Aggregate wall-clock timings of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    pub first_stage_s: f64,
    pub second_stage_s: f64,
    pub gsa_s: f64,
    pub mean_day_s: f64,
    pub total_s: f64,
}

impl RunTimings {
    pub fn from_runs(runs: &[CustomerRun], total_s: f64) -> Self {
        let mut t = RunTimings {
            total_s,
            ..Default::default()
        };
        let mut n_days = 0;
        for r in runs {
            t.gsa_s += r.gsa_s;
            for d in &r.days {
                t.first_stage_s += d.timing.first_stage_s;
                t.second_stage_s += d.timing.second_stage_s;
                n_days += 1;
            }
        }
        t.mean_day_s = (t.first_stage_s + t.second_stage_s) / n_days.max(1) as f64;
        t
    }
}

/// Record of a command invocation written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timings: Option<RunTimings>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: None,
            notes: Vec::new(),
        }
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Second-stage configuration a run actually used.
pub fn effective_second_stage(config: &PipelineConfig, run: &CustomerRun) -> SecondStageConfig {
    SecondStageConfig {
        selected_features: Some(run.features.clone()),
        ..config.second.clone()
    }
}
