//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if a criterion fails that is not listed in
//! `KNOWN_FAILURES`.

use std::sync::Arc;
use std::time::Instant;

use loadcast::gp::{fit_mle_with, FitOptions, GpModel, SeHyperParams};
use loadcast::grid_sim::{generate_year, solve_dc_power_flow, BusSystem, HourlyDataset, LoadProfileSpec};
use loadcast::gsa::{FnSurrogate, SampleMatrices, SobolEstimator};
use loadcast::metrics::{mape, DayEvaluation};
use loadcast::nigp::{predictive_interval, InputNoiseSpec, NigpModel, StochasticTestInput};
use loadcast::nngp::{NngpConfig, NngpKernel, NonlinearityTable, Nonlinearity, TableParams};
use loadcast::pipeline::{run_customer, table_for, CustomerRun, InputNoiseInjection, Method, PipelineConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Criteria that fail on this implementation for reasons documented in the
/// README. They still run and print FAIL.
const KNOWN_FAILURES: &[u32] = &[8];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

fn se(a: &[f64], b: &[f64], h: &SeHyperParams) -> f64 {
    let q: f64 = a
        .iter()
        .zip(b)
        .zip(&h.sq_length_scales)
        .map(|((x, y), l)| (x - y).powi(2) / l)
        .sum();
    h.signal_var * (-0.5 * q).exp()
}

fn random_problem(r: &mut ChaCha8Rng, n: usize, d: usize) -> (DMatrix<f64>, Vec<f64>, SeHyperParams) {
    let x = DMatrix::from_fn(n, d, |_, _| r.random_range(-2.0..2.0));
    let y: Vec<f64> = (0..n)
        .map(|i| (0..d).map(|k| (x[(i, k)] * (k as f64 + 1.0)).sin()).sum::<f64>() + 0.05 * normal(r))
        .collect();
    let hyper = SeHyperParams::new(
        r.random_range(0.5..2.0),
        (0..d).map(|_| r.random_range(0.3..3.0)).collect(),
        r.random_range(0.01..0.1),
    )
    .unwrap();
    (x, y, hyper)
}

/// Textbook GP prediction with an empirical prior mean.
fn oracle_gp(x: &DMatrix<f64>, y: &[f64], h: &SeHyperParams, xs: &[f64]) -> (f64, f64) {
    let n = x.nrows();
    let row = |i: usize| -> Vec<f64> { x.row(i).iter().cloned().collect() };
    let k = DMatrix::from_fn(n, n, |i, j| se(&row(i), &row(j), h) + if i == j { h.noise_var } else { 0.0 });
    let m = y.iter().sum::<f64>() / n as f64;
    let r = DVector::from_iterator(n, y.iter().map(|v| v - m));
    let chol = k.cholesky().unwrap();
    let ks = DVector::from_iterator(n, (0..n).map(|i| se(xs, &row(i), h)));
    let mean = m + ks.dot(&chol.solve(&r));
    let var = h.signal_var - ks.dot(&chol.solve(&ks));
    (mean, var)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for model in 0..20 {
        let d = if model < 10 { 2 } else { 5 };
        let (x, y, hyper) = random_problem(&mut r, 50, d);
        let grads = DMatrix::zeros(50, d);
        let nigp = NigpModel::from_parts(x.clone(), &y, hyper.clone(), InputNoiseSpec::zeros(d), grads).unwrap();
        for _ in 0..10 {
            let xs: Vec<f64> = (0..d).map(|_| r.random_range(-2.5..2.5)).collect();
            let (om, ov) = oracle_gp(&x, &y, &hyper, &xs);
            let (dm, dv) = nigp.predict_deterministic(&xs).unwrap();
            let sp = nigp
                .predict_stochastic(&StochasticTestInput::deterministic(xs.clone()).unwrap())
                .unwrap();
            let mscale = om.abs().max(1.0);
            let vscale = ov.abs().max(hyper.signal_var);
            for e in [
                (dm - om).abs() / mscale,
                (sp.mean - om).abs() / mscale,
                (dv - ov).abs() / vscale,
                (sp.variance - ov).abs() / vscale,
            ] {
                worst = worst.max(e);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        1,
        worst <= 1e-12 && secs < 10.0,
        format!("zero-noise NIGP vs standard GP: max rel err {worst:.2e} (<= 1e-12), {secs:.1}s (< 10s)"),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut r = rng(2);
    let draws = 20_000;
    let mut failures = Vec::new();
    let mut worst_z: f64 = 0.0;
    let mut worst_v: f64 = 0.0;
    for case in 0..10 {
        let d = 1 + case % 3;
        let (x, y, hyper) = random_problem(&mut r, 40, d);
        let plain = GpModel::new(x.clone(), &y, hyper.clone(), None).unwrap();
        let noise: Vec<f64> = hyper.sq_length_scales.iter().map(|l| l * r.random_range(0.005..0.05)).collect();
        let model = NigpModel::from_parts(
            x,
            &y,
            hyper.clone(),
            InputNoiseSpec::new(noise).unwrap(),
            plain.training_gradients(),
        )
        .unwrap();
        let mu: Vec<f64> = (0..d).map(|_| r.random_range(-1.5..1.5)).collect();
        let var: Vec<f64> = hyper.sq_length_scales.iter().map(|l| l * r.random_range(0.01..0.3)).collect();
        let pred = model
            .predict_stochastic(&StochasticTestInput::new(mu.clone(), var.clone()).unwrap())
            .unwrap();
        let mut means = Vec::with_capacity(draws);
        let mut vars = Vec::with_capacity(draws);
        for _ in 0..draws {
            let xs: Vec<f64> = mu.iter().zip(&var).map(|(m, v)| m + v.sqrt() * normal(&mut r)).collect();
            let (m, v) = model.predict_deterministic(&xs).unwrap();
            means.push(m);
            vars.push(v);
        }
        let n = draws as f64;
        let mc_mean = means.iter().sum::<f64>() / n;
        let spread = means.iter().map(|m| (m - mc_mean).powi(2)).sum::<f64>() / (n - 1.0);
        let mc_var = spread + vars.iter().sum::<f64>() / n;
        let z = (pred.mean - mc_mean).abs() / (spread / n).sqrt();
        let rel = (pred.variance - mc_var).abs() / mc_var;
        worst_z = worst_z.max(z);
        worst_v = worst_v.max(rel);
        if z > 3.0 || rel > 0.05 {
            failures.push(case);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        2,
        failures.is_empty() && secs < 120.0,
        format!(
            "stochastic prediction vs 20000-draw MC: worst mean z {worst_z:.2} (<= 3), worst variance rel err {:.2}% (<= 5%), failing cases {failures:?}, {secs:.1}s (< 120s)",
            100.0 * worst_v
        ),
    )
}

/// Arc-cosine recursion for a ReLU network.
fn arccos_oracle(a: &[f64], b: &[f64], depth: usize) -> f64 {
    let d = a.len() as f64;
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let mut kab = 1.0 + dot(a, b) / d;
    let mut kaa = 1.0 + dot(a, a) / d;
    let mut kbb = 1.0 + dot(b, b) / d;
    for _ in 0..depth {
        let c = (kab / (kaa * kbb).sqrt()).clamp(-1.0, 1.0);
        let th = c.acos();
        let step = |k: f64| 1.0 + 0.5 * k;
        kab = 1.0 + (kaa * kbb).sqrt() / (2.0 * std::f64::consts::PI) * (th.sin() + (std::f64::consts::PI - th) * c);
        kaa = step(kaa);
        kbb = step(kbb);
    }
    kab
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let d = 6;
    let x = DMatrix::from_fn(50, d, |_, _| normal(&mut r));
    let mut x = x;
    for mut row in x.row_iter_mut() {
        let s = (d as f64).sqrt() / row.norm();
        row *= s;
    }
    let table = Arc::new(NonlinearityTable::build(Nonlinearity::Relu, TableParams::default()).unwrap());
    let mut worst: f64 = 0.0;
    for depth in [2, 3] {
        let mut cfg = NngpConfig::new(d);
        cfg.depth = depth;
        let k = NngpKernel::new(cfg, Some(table.clone())).unwrap().cross_matrix(&x, &x).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                let a: Vec<f64> = x.row(i).iter().cloned().collect();
                let b: Vec<f64> = x.row(j).iter().cloned().collect();
                worst = worst.max((k[(i, j)] - arccos_oracle(&a, &b, depth)).abs());
            }
        }
    }
    outcome(3, worst <= 1e-3, format!("ReLU table kernel vs arc-cosine closed form, L in {{2,3}}: max abs err {worst:.2e} (<= 1e-3)"))
}

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for d in [1, 3, 7] {
        let (x, y, hyper) = random_problem(&mut r, 60, d);
        let model = GpModel::new(x, &y, hyper.clone(), None).unwrap();
        for _ in 0..20 {
            let xs: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let g = model.posterior_mean_gradient(&xs).unwrap();
            let mut fd = vec![0.0; d];
            for k in 0..d {
                let h = 1e-5 * hyper.sq_length_scales[k].sqrt();
                let mut up = xs.clone();
                let mut dn = xs.clone();
                up[k] += h;
                dn[k] -= h;
                fd[k] = (model.predict_mean(&up).unwrap() - model.predict_mean(&dn).unwrap()) / (2.0 * h);
            }
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
            let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(diff / norm);
        }
    }
    outcome(4, worst <= 1e-4, format!("posterior-mean gradient vs central differences, d in {{1,3,7}}: max rel err {worst:.2e} (<= 1e-4)"))
}

fn uniform_matrices(n: usize, m: usize, lo: f64, hi: f64, seed: u64) -> SampleMatrices {
    SampleMatrices::from_sampler(n, m, seed, |r| (0..m).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let n = 100_000;
    let additive = FnSurrogate::new(3, |x: &[f64]| x[0] + x[1]);
    let mats = uniform_matrices(n, 3, 0.0, 1.0, 5);
    let est = SobolEstimator::new(&additive, &mats, false).unwrap();
    let s1 = est.total_index(0).unwrap().0;
    let s_zero = est.total_index(2).unwrap().0;

    let (a, b) = (7.0, 0.1);
    let ishigami = FnSurrogate::new(3, move |x: &[f64]| x[0].sin() + a * x[1].sin().powi(2) + b * x[2].powi(4) * x[0].sin());
    let pi = std::f64::consts::PI;
    let mats = uniform_matrices(n, 3, -pi, pi, 6);
    let est = SobolEstimator::new(&ishigami, &mats, false).unwrap();
    let v1 = 0.5 * (1.0 + b * pi.powi(4) / 5.0).powi(2);
    let v2 = a * a / 8.0;
    let v13 = b * b * pi.powi(8) * (1.0 / 18.0 - 1.0 / 50.0);
    let v = v1 + v2 + v13;
    let truth = [(v1 + v13) / v, v2 / v, v13 / v];
    let mut worst: f64 = 0.0;
    for (i, s) in truth.iter().enumerate() {
        worst = worst.max((est.total_index(i).unwrap().0 - s).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        5,
        (s1 - 0.5).abs() <= 0.02 && worst <= 0.02 && s_zero == 0.0 && secs < 120.0,
        format!(
            "Jansen total indices at n=100000: additive S_T1 {s1:.4} (0.5 +- 0.02), Ishigami max err {worst:.4} (<= 0.02), ignored input {s_zero} (== 0), {secs:.1}s (< 120s)"
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for sys in [BusSystem::eight_bus(), BusSystem::fourteen_bus()] {
        let n = sys.n_buses();
        let mut b = DMatrix::<f64>::zeros(n, n);
        for l in sys.lines() {
            b[(l.from, l.from)] += l.susceptance;
            b[(l.to, l.to)] += l.susceptance;
            b[(l.from, l.to)] -= l.susceptance;
            b[(l.to, l.from)] -= l.susceptance;
        }
        for _ in 0..100 {
            let mut p: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let total: f64 = p.iter().sum();
            p[sys.reference_bus()] -= total;
            let theta = solve_dc_power_flow(&sys, &p).unwrap();
            let res = &b * DVector::from_vec(theta) - DVector::from_vec(p);
            worst = worst.max(res.amax());
        }
    }
    let ds = generate_year(&BusSystem::eight_bus(), &LoadProfileSpec::default(), None, 120, 6).unwrap();
    let mut antisym = true;
    for h in 0..ds.n_hours() {
        for i in 0..8 {
            for k in 0..8 {
                antisym &= ds.theta_diff(h, i, k) == -ds.theta_diff(h, k, i);
            }
        }
    }
    outcome(
        6,
        worst <= 1e-8 && antisym,
        format!("DC power flow on 8- and 14-bus: max residual {worst:.2e} (<= 1e-8), angle differences exactly antisymmetric: {antisym}"),
    )
}

fn mean_of(run: &CustomerRun, f: impl Fn(&loadcast::pipeline::DayForecast) -> f64) -> f64 {
    run.days.iter().map(f).sum::<f64>() / run.days.len() as f64
}

fn criteria_7_and_8() -> (Outcome, Outcome) {
    let t = Instant::now();
    let ds = generate_year(&BusSystem::eight_bus(), &LoadProfileSpec::default(), None, 130, 42).unwrap();
    let days: Vec<usize> = (100..120).collect();
    let mut cfg = PipelineConfig::default();
    cfg.injection = Some(InputNoiseInjection { relative_std: 0.3 });
    let table = table_for(&cfg.first, None).unwrap();
    let nigp = run_customer(&ds, 0, &days, &cfg, table.clone()).unwrap();
    let mut base_cfg = cfg.clone();
    base_cfg.method = Method::BaselineGp;
    let base = run_customer(&ds, 0, &days, &base_cfg, table.clone()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (cp_n, cp_b) = (nigp.mean_cp(), base.mean_cp());
    let (mape_n, mape_b) = (nigp.mean_mape(), base.mean_mape());
    let c7 = outcome(
        7,
        cp_n >= cp_b && mape_n <= 1.05 * mape_b && secs < 1800.0,
        format!(
            "8-bus, 20 days, injected input noise: CP {cp_n:.3} vs baseline {cp_b:.3} (>=), MAPE {:.2}% vs baseline {:.2}% (<= 1.05x), {secs:.0}s (< 1800s)",
            100.0 * mape_n,
            100.0 * mape_b
        ),
    );

    let gsa_days = &days[..5];
    let mut gsa_cfg = cfg.clone();
    gsa_cfg.gsa.enabled = true;
    gsa_cfg.gsa.top_k = 1;
    let reduced = run_customer(&ds, 0, gsa_days, &gsa_cfg, table).unwrap();
    let full_days: Vec<_> = nigp.days.iter().filter(|d| gsa_days.contains(&d.day)).collect();
    let full = full_days.iter().map(|d| d.timing.total()).sum::<f64>() / full_days.len() as f64;
    let full_s2 = full_days.iter().map(|d| d.timing.second_stage_s).sum::<f64>() / full_days.len() as f64;
    let top1 = mean_of(&reduced, |d| d.timing.total());
    let top1_s2 = mean_of(&reduced, |d| d.timing.second_stage_s);
    let ratio = full / top1;
    let c8 = outcome(
        8,
        ratio >= 3.0,
        format!(
            "per-day cost, full inputs {full:.1}s vs GSA top-1 {top1:.1}s: speedup {ratio:.2}x (>= 3x); second stage alone {:.2}x; one-off GSA {:.1}s",
            full_s2 / top1_s2,
            reduced.gsa_s
        ),
    );
    (c7, c8)
}

fn criterion_9() -> Outcome {
    let mut r = rng(9);
    let (d, n_train, n_test) = (2, 200, 500);
    let n = n_train + n_test;
    let truth = SeHyperParams::new(1.0, vec![0.5, 1.5], 0.01).unwrap();
    let x = DMatrix::from_fn(n, d, |_, _| r.random_range(-3.0..3.0));
    let row = |i: usize| -> Vec<f64> { x.row(i).iter().cloned().collect() };
    let k = DMatrix::from_fn(n, n, |i, j| se(&row(i), &row(j), &truth) + if i == j { 1e-8 } else { 0.0 });
    let l = k.cholesky().unwrap().l();
    let f = l * DVector::from_fn(n, |_, _| normal(&mut r));
    let y: Vec<f64> = (0..n).map(|i| f[i] + truth.noise_var.sqrt() * normal(&mut r)).collect();

    let xt = x.rows(0, n_train).into_owned();
    let init = SeHyperParams::new(0.5, vec![1.0; d], 0.1).unwrap();
    let fit = fit_mle_with(&xt, &y[..n_train], &init, None, &FitOptions::default()).unwrap();
    let model = GpModel::new(xt, &y[..n_train], fit.hyper.clone(), None).unwrap();
    let mut covered = 0;
    for i in n_train..n {
        let (m, v) = model.predict(&row(i)).unwrap();
        let (lo, hi) = predictive_interval(m, v + fit.hyper.noise_var, 0.95).unwrap();
        if lo <= y[i] && y[i] <= hi {
            covered += 1;
        }
    }
    let cov = covered as f64 / n_test as f64;
    outcome(9, (0.88..=0.99).contains(&cov), format!("95% GP intervals on 500 held-out draws: coverage {cov:.3} (in [0.88, 0.99])"))
}

fn criterion_10() -> Outcome {
    let mut r = rng(10);
    let mut ok = true;
    for _ in 0..50 {
        let actuals: Vec<f64> = (0..24).map(|_| r.random_range(0.1..5.0) * if r.random_bool(0.2) { -1.0 } else { 1.0 }).collect();
        ok &= mape(&actuals, &actuals).unwrap() == 0.0;
    }
    let actuals: Vec<f64> = (0..24).map(|h| 1.0 + h as f64).collect();
    // For each count k, hours below k are covered (alternating on the lower
    // edge, the upper edge and strictly inside); the rest miss by a hair.
    for k in 0..=24 {
        let intervals: Vec<(f64, f64)> = actuals
            .iter()
            .enumerate()
            .map(|(h, &a)| {
                if h < k {
                    match h % 3 {
                        0 => (a, a + 1.0),
                        1 => (a - 1.0, a),
                        _ => (a - 0.5, a + 0.5),
                    }
                } else if h % 2 == 0 {
                    (a + 1e-9, a + 1.0)
                } else {
                    (a - 1.0, a - 1e-9)
                }
            })
            .collect();
        let e = DayEvaluation::new(0, 0, &actuals, &actuals, &intervals).unwrap();
        ok &= e.covered_count == k && e.cp == k as f64 / 24.0 && e.mape == 0.0;
    }
    outcome(10, ok, "MAPE = 0 on perfect forecasts; CP = covered/24 with boundaries included, every count 0..=24".into())
}

fn criterion_11() -> Outcome {
    let ds = generate_year(&BusSystem::eight_bus(), &LoadProfileSpec::default(), None, 130, 11).unwrap();
    let day = 100;
    let mut cfg = PipelineConfig::default();
    cfg.second.n_t2 = 10;
    let table = table_for(&cfg.first, None).unwrap();
    let clean = run_customer(&ds, 0, &[day], &cfg, table.clone()).unwrap();
    let mut ok = true;
    let mut checked = 0;
    for k in [1usize, 12, 24] {
        let poisoned: HourlyDataset = ds.poisoned_from(24 * day + k, 1e3);
        let run = run_customer(&poisoned, 0, &[day], &cfg, table.clone()).unwrap();
        // The forecast for hour h may read hours before h only.
        for h in 0..k {
            let (a, b) = (&clean.days[0].forecasts[h], &run.days[0].forecasts[h]);
            ok &= a.point == b.point && a.lower == b.lower && a.upper == b.upper;
            checked += 1;
        }
    }
    outcome(
        11,
        ok,
        format!("future poisoning leaves {checked} earlier-hour forecasts bit-identical (refit uses data before the day only)"),
    )
}

fn main() {
    let start = Instant::now();
    let mut results = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
    ];
    let (c7, c8) = criteria_7_and_8();
    results.extend([c7, c8, criterion_9(), criterion_10(), criterion_11()]);
    results.sort_by_key(|o| o.id);

    let mut unexpected = 0;
    for o in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_FAILURES.contains(&o.id) { " [known]" } else { "" };
        println!("criterion {:>2}: {tag}{note}  {}", o.id, o.detail);
        if !o.pass && !KNOWN_FAILURES.contains(&o.id) {
            unexpected += 1;
        }
    }
    println!("acceptance: {} of {} pass, {:.0}s", results.iter().filter(|o| o.pass).count(), results.len(), start.elapsed().as_secs_f64());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
