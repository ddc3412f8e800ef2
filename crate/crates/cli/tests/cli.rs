use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn loadcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loadcast"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

/// Small second stage and GSA so that forecast runs take seconds.
const SMALL: &str = "
[forecast.pipeline.second]
n_t2 = 10
[forecast.pipeline.gsa]
stage2_samples = 500
";

fn small_config(dir: &Path) {
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
}

#[test]
fn simulate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let o = loadcast(tmp.path(), &["simulate", "--system", "8-bus", "--days", "365", "--seed", "42", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = read(tmp.path().join("a/dataset.csv"));
    assert_eq!(a.lines().count(), 1 + 8760 * 8);
    assert_eq!(a, read(tmp.path().join("b/dataset.csv")));
    assert!(tmp.path().join("a/manifest.json").is_file());
}

#[test]
fn missing_system_file_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let o = loadcast(tmp.path(), &["simulate", "--system", "no/such/grid.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn short_horizon_names_the_training_window() {
    let tmp = TempDir::new().unwrap();
    let o = loadcast(tmp.path(), &["simulate", "--days", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_t1"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn forecast_day_without_history_is_rejected_before_compute() {
    let tmp = TempDir::new().unwrap();
    let o = loadcast(tmp.path(), &["forecast", "--days", "5", "--out", "f"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_t1"));
    assert!(!tmp.path().join("f").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "seed = 1\n[forecast]\nhorizon = 3\n").unwrap();
    let o = loadcast(tmp.path(), &["simulate", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon"));

    for args in [
        &["forecast", "--level", "1.5"][..],
        &["forecast", "--customers", "9"],
        &["forecast", "--method", "magic"],
        &["simulate", "stray-input"],
    ] {
        assert_eq!(loadcast(tmp.path(), args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn forecast_is_reproducible_and_method_switches() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path());
    let run = |out: &str, method: &str| {
        let o = loadcast(
            tmp.path(),
            &["forecast", "--config", "small.toml", "--days", "100", "--method", method, "--gsa", "off", "--out", out],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run("a", "baseline-gp");
    run("b", "baseline-gp");
    run("c", "nngp-nigp");
    let p = tmp.path();
    for f in ["forecast.csv", "summary.csv"] {
        assert_eq!(read(p.join("a").join(f)), read(p.join("b").join(f)), "{f}");
    }
    let forecast = read(p.join("a/forecast.csv"));
    assert_eq!(forecast.lines().count(), 25);
    assert_ne!(forecast, read(p.join("c/forecast.csv")));
    let manifest: serde_json::Value = serde_json::from_str(&read(p.join("c/manifest.json"))).unwrap();
    assert_eq!(manifest.pointer("/config/forecast/pipeline/method").unwrap(), "nngp-nigp");
    assert_eq!(manifest.pointer("/config/forecast/pipeline/gsa/enabled").unwrap(), false);
    let timings = read(p.join("a/timings.csv"));
    assert!(timings.starts_with("system,method,gsa,customer,day,first_stage_s,second_stage_s,total_s"));

    // The three runs evaluate together into per-method groups.
    let o = loadcast(p, &["evaluate", "--out", "eval", "a", "c"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let quartiles = read(p.join("eval/quartiles.csv"));
    assert!(quartiles.contains("8-bus,baseline-gp,off,mape"));
    assert!(quartiles.contains("8-bus,nngp-nigp,off,cp"));
}

#[test]
fn stage_two_gsa_reports_every_feature() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path());
    for out in ["a", "b"] {
        let o = loadcast(tmp.path(), &["gsa", "--config", "small.toml", "--days", "100", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let report = read(tmp.path().join("a/gsa_stage2.csv"));
    assert_eq!(report.lines().count(), 1 + 7);
    assert!(report.starts_with("feature,total_index,std_error"));
    assert_eq!(report, read(tmp.path().join("b/gsa_stage2.csv")));
}

fn write_fixture(dir: &Path, gsa: bool, seconds: f64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut csv = String::from("customer,day,hour,actual,point,lower,upper\n");
    for day in [100, 101] {
        for h in 0..24 {
            let a = 1.0 + 0.1 * h as f64;
            csv += &format!("0,{day},{h},{a},{a},{},{}\n", a - 0.5, a + 0.5);
        }
    }
    std::fs::write(dir.join("forecast.csv"), csv).unwrap();
    let on = if gsa { "on" } else { "off" };
    let mut timings = String::from("system,method,gsa,customer,day,first_stage_s,second_stage_s,total_s\n");
    for day in [100, 101] {
        timings += &format!("8-bus,nngp-nigp,{on},0,{day},1.0,{},{}\n", seconds - 1.0, seconds);
    }
    std::fs::write(dir.join("timings.csv"), timings).unwrap();
    let manifest = serde_json::json!({
        "config": {"system": "8-bus", "forecast": {"pipeline": {"method": "nngp-nigp", "gsa": {"enabled": gsa}}}}
    });
    std::fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
}

#[test]
fn evaluate_perfect_fixture() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    write_fixture(&p.join("full"), false, 50.0);
    write_fixture(&p.join("top1"), true, 4.0);
    let o = loadcast(p, &["evaluate", "--out", "eval", "full", "top1"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let summary = read(p.join("eval/summary.csv"));
    let mut rows = 0;
    for line in summary.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0, "{line}");
        assert_eq!(cols[3].parse::<f64>().unwrap(), 1.0, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 4);

    let table = read(p.join("eval/timing_table.csv"));
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("system,without_gsa_s,with_gsa_min_s,with_gsa_max_s"));
    assert_eq!(lines.next(), Some("8-bus,50.000,4.000,4.000"));
}

#[test]
fn evaluate_needs_forecasts() {
    let tmp = TempDir::new().unwrap();
    std::fs::create_dir(tmp.path().join("empty")).unwrap();
    let o = loadcast(tmp.path(), &["evaluate", "empty"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("forecast.csv"));

    let o = loadcast(tmp.path(), &["evaluate"]);
    assert_eq!(o.status.code(), Some(2));
}
