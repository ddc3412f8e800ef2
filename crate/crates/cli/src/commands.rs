use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use loadcast::grid_sim::{generate_year, HourlyDataset};
use loadcast::metrics::{quartiles, write_summary_csv, DayEvaluation};
use loadcast::pipeline::{
    check_days, evaluate_records, feature_labels, hourly_labels, read_forecast_csv, run_customer, run_gsa_stage1,
    run_gsa_stage2, table_for, write_forecast_csv, CustomerRun, RunManifest, RunTimings,
};
use loadcast::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Environment variable naming the nonlinearity-table cache directory.
pub const TABLE_CACHE_ENV: &str = "LOADCAST_TABLE_CACHE";

fn table_cache() -> Option<PathBuf> {
    std::env::var_os(TABLE_CACHE_ENV).map(PathBuf::from)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn config_json(config: &RunConfig) -> serde_json::Value {
    serde_json::to_value(config).expect("config serializes")
}

fn prepare_out(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out)?;
    Ok(())
}

/// Dataset named in the forecast section, or a fresh simulation.
fn dataset_for(config: &RunConfig) -> Result<(HourlyDataset, String)> {
    match &config.forecast.dataset {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| Error::Config(format!("dataset {}: {e}", path.display())))?;
            let ds = HourlyDataset::read_csv(file, config.forecast.pv_adjusted)?;
            Ok((ds, path.display().to_string()))
        }
        None => {
            let system = config.load_system()?;
            let sim = &config.simulate;
            let ds = generate_year(&system, &sim.load, sim.pv.as_ref(), sim.days, config.seed)?;
            Ok((ds, format!("simulated:{}:{}d:seed{}", config.system, sim.days, config.seed)))
        }
    }
}

fn check_customers(config: &RunConfig, dataset: &HourlyDataset) -> Result<()> {
    let n = dataset.n_buses();
    if config.forecast.customers.is_empty() {
        return Err(Error::Config("no customers requested".into()));
    }
    if let Some(c) = config.forecast.customers.iter().find(|&&c| c >= n) {
        return Err(Error::Config(format!("customer {c} out of range for {n} buses")));
    }
    Ok(())
}

pub fn simulate(config: &RunConfig) -> Result<()> {
    let system = config.load_system()?;
    let sim = &config.simulate;
    let start = Instant::now();
    let ds = generate_year(&system, &sim.load, sim.pv.as_ref(), sim.days, config.seed)?;
    prepare_out(config)?;
    let data = config.out.join("dataset.csv");
    ds.write_csv(create(&data)?)?;
    let sys_path = config.out.join("system.toml");
    std::fs::write(&sys_path, system.to_toml_string())?;

    let mut manifest = RunManifest::new("simulate", config.seed, config_json(config));
    manifest.inputs.push(config.system.clone());
    manifest.outputs = vec![data.display().to_string(), sys_path.display().to_string()];
    manifest.notes.push(format!(
        "{} hours x {} buses, reference bus {}",
        ds.n_hours(),
        ds.n_buses(),
        ds.reference_bus()
    ));
    manifest.timings = Some(RunTimings {
        total_s: start.elapsed().as_secs_f64(),
        ..Default::default()
    });
    manifest.write(&config.out.join("manifest.json"))?;
    log::info!("wrote {} ({} hours)", data.display(), ds.n_hours());
    Ok(())
}

/// One line of `timings.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub system: String,
    pub method: String,
    pub gsa: String,
    pub customer: usize,
    pub day: usize,
    pub first_stage_s: f64,
    pub second_stage_s: f64,
    pub total_s: f64,
}

pub fn forecast(config: &RunConfig) -> Result<()> {
    let (dataset, source) = dataset_for(config)?;
    let pipeline = &config.forecast.pipeline;
    pipeline.validate(dataset.n_buses())?;
    check_customers(config, &dataset)?;
    check_days(&dataset, &config.forecast.days, pipeline)?;
    prepare_out(config)?;

    let start = Instant::now();
    let table = table_for(&pipeline.first, table_cache().as_deref())?;
    let runs = config
        .forecast
        .customers
        .par_iter()
        .map(|&c| run_customer(&dataset, c, &config.forecast.days, pipeline, table.clone()))
        .collect::<Result<Vec<CustomerRun>>>()?;
    let total = start.elapsed().as_secs_f64();

    let forecast_path = config.out.join("forecast.csv");
    write_forecast_csv(create(&forecast_path)?, &runs)?;
    let evals: Vec<DayEvaluation> = runs.iter().flat_map(|r| r.days.iter().map(|d| d.evaluation.clone())).collect();
    let summary_path = config.out.join("summary.csv");
    write_summary_csv(create(&summary_path)?, &evals)?;

    let gsa = if pipeline.gsa.enabled { "on" } else { "off" };
    let method = serde_json::to_value(pipeline.method).expect("method serializes");
    let method = method.as_str().unwrap_or_default().to_string();
    let timing_path = config.out.join("timings.csv");
    let mut w = csv::Writer::from_writer(create(&timing_path)?);
    for run in &runs {
        for d in &run.days {
            w.serialize(TimingRow {
                system: config.system_label(),
                method: method.clone(),
                gsa: gsa.into(),
                customer: run.customer,
                day: d.day,
                first_stage_s: d.timing.first_stage_s,
                second_stage_s: d.timing.second_stage_s,
                total_s: d.timing.total(),
            })?;
        }
    }
    w.flush()?;

    let mut manifest = RunManifest::new("forecast", config.seed, config_json(config));
    manifest.inputs.push(source);
    manifest.outputs = [&forecast_path, &summary_path, &timing_path]
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    manifest.timings = Some(RunTimings::from_runs(&runs, total));
    for run in &runs {
        manifest.notes.push(format!(
            "customer {}: features {:?}, mean MAPE {:.4}, mean CP {:.3}, GSA {:.2}s",
            run.customer,
            run.features,
            run.mean_mape(),
            run.mean_cp(),
            run.gsa_s
        ));
    }
    manifest.write(&config.out.join("manifest.json"))?;
    for run in &runs {
        println!(
            "customer {}: {} days, mean MAPE {:.2}%, mean CP {:.3}, {:.2}s per day",
            run.customer,
            run.days.len(),
            100.0 * run.mean_mape(),
            run.mean_cp(),
            run.mean_day_seconds()
        );
    }
    Ok(())
}

pub fn gsa(config: &RunConfig) -> Result<()> {
    let (dataset, source) = dataset_for(config)?;
    let pipeline = &config.forecast.pipeline;
    let n = dataset.n_buses();
    pipeline.validate(n)?;
    check_customers(config, &dataset)?;
    let i = config.forecast.customers[0];
    let day = *config
        .forecast
        .days
        .first()
        .ok_or_else(|| Error::Config("no analysis day given".into()))?;
    check_days(&dataset, &[day], pipeline)?;
    let stage = config.gsa.stage;
    let component = match config.gsa.component {
        Some(j) if j == i || j >= n => {
            return Err(Error::Config(format!("component {j} is not a valid partner of customer {i}")))
        }
        Some(j) => j,
        None => (0..n).find(|&k| k != i).expect("at least two buses"),
    };
    if stage != 1 && stage != 2 {
        return Err(Error::Config(format!("GSA stage must be 1 or 2, got {stage}")));
    }
    prepare_out(config)?;

    let start = Instant::now();
    let h0 = 24 * day;
    let mut outputs = Vec::new();
    if stage == 2 {
        let report = run_gsa_stage2(&dataset, i, h0, &pipeline.second, &pipeline.gsa, config.seed)?;
        let path = config.out.join("gsa_stage2.csv");
        report.write_indices_csv(create(&path)?, Some(&feature_labels(n, i)))?;
        outputs.push(path);
    } else {
        let table = table_for(&pipeline.first, table_cache().as_deref())?;
        let report = run_gsa_stage1(&dataset, i, component, h0, &pipeline.first, &pipeline.gsa, table, config.seed)?;
        let path = config.out.join("gsa_stage1.csv");
        report.write_indices_csv(create(&path)?, Some(&hourly_labels(n, i)))?;
        let hpath = config.out.join("gsa_stage1_blocks.csv");
        report.write_aggregates_csv(create(&hpath)?, Some(&feature_labels(n, i)))?;
        outputs.push(path);
        outputs.push(hpath);
    }
    let mut manifest = RunManifest::new("gsa", config.seed, config_json(config));
    manifest.inputs.push(source);
    manifest.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    manifest.timings = Some(RunTimings {
        gsa_s: start.elapsed().as_secs_f64(),
        total_s: start.elapsed().as_secs_f64(),
        ..Default::default()
    });
    manifest.write(&config.out.join("manifest.json"))?;
    Ok(())
}

/// Labels of a forecast directory, read from its manifest when present.
fn run_labels(dir: &Path) -> (String, String, String) {
    let text = std::fs::read_to_string(dir.join("manifest.json")).ok();
    let value: Option<serde_json::Value> = text.and_then(|t| serde_json::from_str(&t).ok());
    let get = |ptr: &str| {
        value
            .as_ref()
            .and_then(|v| v.pointer(ptr))
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Bool(b) => if *b { "on" } else { "off" }.to_string(),
                other => other.to_string(),
            })
            .unwrap_or_else(|| "unknown".into())
    };
    let system = get("/config/system");
    let system = Path::new(&system)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or(system);
    (
        system,
        get("/config/forecast/pipeline/method"),
        get("/config/forecast/pipeline/gsa/enabled"),
    )
}

pub fn evaluate(config: &RunConfig) -> Result<()> {
    let inputs = &config.evaluate.inputs;
    if inputs.is_empty() {
        return Err(Error::Config("no forecast directories given to evaluate".into()));
    }
    let mut groups: BTreeMap<(String, String, String), Vec<DayEvaluation>> = BTreeMap::new();
    let mut timings: Vec<TimingRow> = Vec::new();
    for dir in inputs {
        let path = dir.join("forecast.csv");
        if !path.is_file() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} has no forecast.csv", dir.display()),
            )));
        }
        let records = read_forecast_csv(File::open(&path)?)?;
        if records.is_empty() {
            return Err(Error::Input(format!("{} holds no forecasts", path.display())));
        }
        let evals = evaluate_records(&records)?;
        groups.entry(run_labels(dir)).or_default().extend(evals);
        let tpath = dir.join("timings.csv");
        if tpath.is_file() {
            let mut r = csv::Reader::from_path(&tpath)?;
            for row in r.deserialize() {
                timings.push(row?);
            }
        }
    }
    prepare_out(config)?;

    let all: Vec<DayEvaluation> = groups.values().flatten().cloned().collect();
    let summary_path = config.out.join("summary.csv");
    write_summary_csv(create(&summary_path)?, &all)?;

    let quart_path = config.out.join("quartiles.csv");
    let mut w = csv::Writer::from_writer(create(&quart_path)?);
    w.write_record(["system", "method", "gsa", "metric", "min", "q1", "median", "q3", "max", "mean", "count"])?;
    for ((system, method, gsa), evals) in &groups {
        let mapes: Vec<f64> = evals.iter().map(|e| e.mape).collect();
        let cps: Vec<f64> = evals.iter().map(|e| e.cp).collect();
        for (metric, values) in [("mape", mapes), ("cp", cps)] {
            let q = quartiles(&values)?;
            let mut row = vec![system.clone(), method.clone(), gsa.clone(), metric.to_string()];
            row.extend([q.min, q.q1, q.median, q.q3, q.max, q.mean].iter().map(|v| format!("{v:.12e}")));
            row.push(q.count.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut outputs = vec![summary_path, quart_path];
    if !timings.is_empty() {
        let path = config.out.join("timing_table.csv");
        write_timing_table(create(&path)?, &timings)?;
        outputs.push(path);
    }
    let mut manifest = RunManifest::new("evaluate", config.seed, config_json(config));
    manifest.inputs = inputs.iter().map(|p| p.display().to_string()).collect();
    manifest.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    manifest.write(&config.out.join("manifest.json"))?;
    for ((system, method, gsa), evals) in &groups {
        let n = evals.len() as f64;
        println!(
            "{system} {method} gsa={gsa}: {} days, mean MAPE {:.2}%, mean CP {:.3}",
            evals.len(),
            100.0 * evals.iter().map(|e| e.mape).sum::<f64>() / n,
            evals.iter().map(|e| e.cp).sum::<f64>() / n
        );
    }
    Ok(())
}

/// Per-system mean seconds per prediction day without GSA, and the range of
/// per-customer means with GSA.
pub fn write_timing_table<W: std::io::Write>(writer: W, rows: &[TimingRow]) -> Result<()> {
    let mut by_system: BTreeMap<&str, (Vec<f64>, BTreeMap<usize, Vec<f64>>)> = BTreeMap::new();
    for r in rows {
        let entry = by_system.entry(r.system.as_str()).or_default();
        if r.gsa == "on" {
            entry.1.entry(r.customer).or_default().push(r.total_s);
        } else {
            entry.0.push(r.total_s);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["system", "without_gsa_s", "with_gsa_min_s", "with_gsa_max_s"])?;
    for (system, (off, on)) in by_system {
        let without = (!off.is_empty()).then(|| mean(&off));
        let per_customer: Vec<f64> = on.values().map(|v| mean(v)).collect();
        let lo = per_customer.iter().cloned().reduce(f64::min);
        let hi = per_customer.iter().cloned().reduce(f64::max);
        w.write_record([system.to_string(), fmt(without), fmt(lo), fmt(hi)])?;
    }
    w.flush()?;
    Ok(())
}
