use loadcast::grid_sim::{generate_year, BusSystem, HourlyDataset, LoadProfileSpec};
use loadcast::gsa::select_features;
use loadcast::pipeline::{
    build_second_stage_training_set, components, cross_validate, fit_second_stage, run_gsa_stage2, table_for, CvCandidate,
    FirstStageConfig, FirstStageModels, GsaSettings, InputForecast, LoadModel, Method, PipelineConfig, SecondStageConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn eight_bus() -> HourlyDataset {
    generate_year(&BusSystem::eight_bus(), &LoadProfileSpec::default(), None, 130, 42).unwrap()
}

fn small_second(features: Option<Vec<usize>>) -> SecondStageConfig {
    SecondStageConfig {
        n_t2: 10,
        selected_features: features,
        ..Default::default()
    }
}

/// Three buses whose angles follow daily sinusoids plus a little noise.
fn sinusoid_dataset(days: usize) -> HourlyDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let hours = 24 * days;
    let mut angles = Vec::with_capacity(3 * hours);
    for h in 0..hours {
        let t = 2.0 * std::f64::consts::PI * h as f64 / 24.0;
        angles.push(0.3 * t.sin() + noise.sample(&mut rng));
        angles.push(0.2 * (t + 1.0).cos() + noise.sample(&mut rng));
        angles.push(0.0);
    }
    HourlyDataset::new(3, 2, false, vec![1.0; 3 * hours], angles).unwrap()
}

#[test]
fn first_stage_beats_persistence_on_daily_cycles() {
    let ds = sinusoid_dataset(40);
    let mut config = FirstStageConfig {
        n_t1: 20,
        ..Default::default()
    };
    // Matches the generating noise, about 2e-3 of the angle variance. Far
    // smaller values leave the near-periodic windows numerically singular.
    config.nngp.obs_noise = 1e-3;
    let table = table_for(&config, None).unwrap();
    let h_star = 24 * 30;
    let models = FirstStageModels::fit(&ds, 0, h_star, &config, &[0, 1], table).unwrap();
    let comps = components(3, 0);
    let (mut wins, mut total) = (0, 0);
    for h in h_star..h_star + 24 {
        let f = models.forecast(&ds, h).unwrap();
        for (p, &j) in comps.iter().enumerate() {
            let truth = ds.theta_diff(h, 0, j);
            let persistence = ds.theta_diff(h - 1, 0, j);
            if (f.mean[p] - truth).abs() < (persistence - truth).abs() {
                wins += 1;
            }
            total += 1;
        }
    }
    assert!(wins as f64 >= 0.7 * total as f64, "{wins} of {total}");
}

#[test]
fn one_selected_feature_gives_one_input() {
    let ds = eight_bus();
    let (x, y) = build_second_stage_training_set(&ds, 0, 2400, &small_second(Some(vec![0]))).unwrap();
    assert_eq!(x.ncols(), 1);
    assert_eq!(x.nrows(), 240);
    assert_eq!(y.len(), 240);
}

fn input_at(ds: &HourlyDataset, h: usize, variance: f64) -> InputForecast {
    let comps = components(ds.n_buses(), 0);
    let mean: Vec<f64> = comps.iter().map(|&j| ds.theta_diff(h, 0, j)).collect();
    InputForecast::new(h, (0..comps.len()).collect(), mean, vec![variance; comps.len()]).unwrap()
}

#[test]
fn wider_input_uncertainty_widens_intervals_beyond_baseline() {
    let ds = eight_bus();
    let config = small_second(Some(vec![0]));
    let h = 2400;
    let nigp = fit_second_stage(&ds, 0, h, &config, Method::NngpNigp, None).unwrap();
    let base = fit_second_stage(&ds, 0, h, &config, Method::BaselineGp, None).unwrap();
    assert!(matches!(nigp, LoadModel::Nigp(_)) && matches!(base, LoadModel::Baseline(_)));
    let (xs, _) = build_second_stage_training_set(&ds, 0, h, &config).unwrap();
    let spread = {
        let v: Vec<f64> = xs.column(0).iter().cloned().collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    for hour in h..h + 6 {
        let small = input_at(&ds, hour, 1e-4 * spread);
        let large = input_at(&ds, hour, 1e-2 * spread);
        let width = |m: &LoadModel, i: &InputForecast| {
            let f = m.forecast(i, &config, 0, 8).unwrap();
            f.upper - f.lower
        };
        assert!(width(&nigp, &large) > width(&nigp, &small));
        assert!(width(&base, &large) < width(&nigp, &large));
    }
}

#[test]
fn sensitivity_isolates_the_coupled_angle() {
    // Bus 0 hangs off bus 1 alone, so its load depends on the first angle
    // difference only.
    let ds = eight_bus();
    let settings = GsaSettings {
        stage2_samples: 2000,
        ..Default::default()
    };
    let report = run_gsa_stage2(&ds, 0, 2400, &small_second(None), &settings, 7).unwrap();
    assert_eq!(select_features(&report.total_indices, 1).unwrap(), vec![0]);
    assert!(report.total_indices[0] > 0.8, "{:?}", report.total_indices);
    for k in 1..report.total_indices.len() {
        let (s, e) = (report.total_indices[k], report.std_errors[k]);
        assert!(s.abs() <= 3.0 * e + 0.02, "feature {k}: {s} +- {e}");
    }
}

#[test]
fn cross_validation_prefers_the_generating_feature() {
    let ds = eight_bus();
    let first = FirstStageConfig {
        n_t1: 20,
        ..Default::default()
    };
    let grid: Vec<CvCandidate> = [5usize, 0]
        .iter()
        .map(|&f| CvCandidate {
            first: first.clone(),
            second: small_second(Some(vec![f])),
        })
        .collect();
    let base = PipelineConfig {
        method: Method::BaselineGp,
        ..Default::default()
    };
    let out = cross_validate(&ds, 0, &grid, &[90], &base, None).unwrap();
    assert_eq!(out.best, 1, "{:?}", out.scores);
    assert!(out.folds.iter().all(|f| f.train_end <= f.valid_start));
}
