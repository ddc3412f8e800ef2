use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::HourlyDataset;
use super::system::{BusSystem, DcSolver};
use crate::error::{Error, Result};

/// Minimum simulated horizon: a 60-day first-stage window plus history and
/// evaluation days.
pub const MIN_DAYS: usize = 120;

/// Shape of the synthetic consumption profile.
///
/// `load = base · diurnal · weekly · seasonal · exp(σε − σ²/2)` where `ε` is a
/// unit-variance AR(1) sequence per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadProfileSpec {
    /// Mean per-unit load.
    pub base_load: f64,
    /// Per-bus base loads are drawn uniformly in `base · (1 ± spread)`.
    pub base_spread: f64,
    /// Relative amplitude of the 24-hour sinusoid; must stay below 1.
    pub diurnal_amplitude: f64,
    /// Hour of day at which the diurnal sinusoid peaks.
    pub diurnal_peak_hour: f64,
    /// Per-bus uniform jitter on the peak hour.
    pub peak_jitter_hours: f64,
    /// Multiplier applied on days 5 and 6 of each week.
    pub weekend_factor: f64,
    pub seasonal_amplitude: f64,
    pub seasonal_peak_day: f64,
    /// Standard deviation of the log-normal multiplicative noise.
    pub noise_sigma: f64,
    /// Lag-one autocorrelation of the log-noise.
    pub noise_persistence: f64,
}

impl Default for LoadProfileSpec {
    fn default() -> Self {
        LoadProfileSpec {
            base_load: 1.0,
            base_spread: 0.3,
            diurnal_amplitude: 0.35,
            diurnal_peak_hour: 19.0,
            peak_jitter_hours: 2.0,
            weekend_factor: 0.9,
            seasonal_amplitude: 0.15,
            seasonal_peak_day: 200.0,
            noise_sigma: 0.08,
            noise_persistence: 0.5,
        }
    }
}

/// Rooftop PV shape: a half-sine over daylight hours scaled by a shared AR(1)
/// clear-sky fraction in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PvProfileSpec {
    /// Mean per-unit peak PV output per bus.
    pub capacity: f64,
    /// Per-bus capacities are drawn uniformly in `capacity · (1 ± spread)`.
    pub capacity_spread: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    /// Half-day-length swing between solstices, in hours.
    pub daylight_swing_hours: f64,
    pub cloud_persistence: f64,
    pub cloud_mean: f64,
    pub cloud_sigma: f64,
}

impl Default for PvProfileSpec {
    fn default() -> Self {
        PvProfileSpec {
            capacity: 0.4,
            capacity_spread: 0.5,
            sunrise_hour: 6.0,
            sunset_hour: 18.0,
            daylight_swing_hours: 1.5,
            cloud_persistence: 0.85,
            cloud_mean: 0.7,
            cloud_sigma: 0.12,
        }
    }
}

impl PvProfileSpec {
    /// PV with zero capacity; subtracting it leaves loads unchanged.
    pub fn zeroed() -> Self {
        PvProfileSpec {
            capacity: 0.0,
            ..Default::default()
        }
    }
}

fn validate(load: &LoadProfileSpec, pv: Option<&PvProfileSpec>, days: usize) -> Result<()> {
    if days < MIN_DAYS {
        return Err(Error::Config(format!(
            "horizon of {days} days is too short: need at least {MIN_DAYS} days \
             (n_t1 = 60 training days plus input history and evaluation days)"
        )));
    }
    let checks = [
        (load.base_load > 0.0, "base_load must be positive"),
        ((0.0..1.0).contains(&load.base_spread), "base_spread must be in [0, 1)"),
        ((0.0..1.0).contains(&load.diurnal_amplitude), "diurnal_amplitude must be in [0, 1)"),
        ((0.0..1.0).contains(&load.seasonal_amplitude), "seasonal_amplitude must be in [0, 1)"),
        (load.weekend_factor > 0.0, "weekend_factor must be positive"),
        (load.noise_sigma >= 0.0, "noise_sigma must be non-negative"),
        ((0.0..1.0).contains(&load.noise_persistence), "noise_persistence must be in [0, 1)"),
    ];
    for (ok, msg) in checks {
        if !ok {
            return Err(Error::Config(msg.into()));
        }
    }
    if let Some(pv) = pv {
        if pv.capacity < 0.0 || !(0.0..=1.0).contains(&pv.capacity_spread) {
            return Err(Error::Config("PV capacity must be non-negative, spread in [0, 1]".into()));
        }
        if pv.sunset_hour <= pv.sunrise_hour {
            return Err(Error::Config("sunset must follow sunrise".into()));
        }
        if !(0.0..1.0).contains(&pv.cloud_persistence) {
            return Err(Error::Config("cloud_persistence must be in [0, 1)".into()));
        }
    }
    Ok(())
}

/// Simulates `days` of hourly operation and solves a DC power flow per hour.
///
/// Randomness comes from three independent ChaCha streams of `seed` (bus
/// parameters, load noise, clouds), so switching PV on or off does not change
/// the load draws. PV-adjusted net loads may go negative; they are kept as-is.
pub fn generate_year(
    system: &BusSystem,
    load: &LoadProfileSpec,
    pv: Option<&PvProfileSpec>,
    days: usize,
    seed: u64,
) -> Result<HourlyDataset> {
    validate(load, pv, days)?;
    let n = system.n_buses();
    let hours = days * 24;
    let solver = DcSolver::new(system)?;

    let mut param_rng = ChaCha8Rng::seed_from_u64(seed);
    param_rng.set_stream(0);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let mut cloud_rng = ChaCha8Rng::seed_from_u64(seed);
    cloud_rng.set_stream(2);

    let base: Vec<f64> = (0..n)
        .map(|_| load.base_load * (1.0 + load.base_spread * param_rng.random_range(-1.0..=1.0)))
        .collect();
    let peak: Vec<f64> = (0..n)
        .map(|_| load.diurnal_peak_hour + load.peak_jitter_hours * param_rng.random_range(-1.0..=1.0))
        .collect();
    let amp: Vec<f64> = (0..n)
        .map(|_| load.diurnal_amplitude * param_rng.random_range(0.8..=1.0))
        .collect();
    let pv_cap: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = param_rng.random_range(-1.0..=1.0);
            pv.map_or(0.0, |p| p.capacity * (1.0 + p.capacity_spread * u))
        })
        .collect();

    let rho = load.noise_persistence;
    let innov = (1.0 - rho * rho).sqrt();
    let sigma = load.noise_sigma;
    let mut eps: Vec<f64> = (0..n).map(|_| noise_rng.sample(StandardNormal)).collect();
    let mut cloud = pv.map_or(0.0, |p| p.cloud_mean);

    let mut loads = Vec::with_capacity(hours * n);
    let mut angles = Vec::with_capacity(hours * n);
    let mut net = vec![0.0; n];
    for t in 0..hours {
        let day = (t / 24) as f64;
        let hod = (t % 24) as f64;
        let weekly = if (t / 24) % 7 >= 5 { load.weekend_factor } else { 1.0 };
        let seasonal = 1.0 + load.seasonal_amplitude * (2.0 * PI * (day - load.seasonal_peak_day) / 365.0).cos();

        if t > 0 {
            for e in eps.iter_mut() {
                let z: f64 = noise_rng.sample(StandardNormal);
                *e = rho * *e + innov * z;
            }
        }
        let solar = match pv {
            Some(p) => {
                let z: f64 = cloud_rng.sample(StandardNormal);
                cloud = (p.cloud_persistence * cloud
                    + (1.0 - p.cloud_persistence) * p.cloud_mean
                    + p.cloud_sigma * z)
                    .clamp(0.0, 1.0);
                let half = 0.5 * (p.sunset_hour - p.sunrise_hour)
                    + p.daylight_swing_hours * (2.0 * PI * (day - 172.0) / 365.0).cos();
                let center = 0.5 * (p.sunrise_hour + p.sunset_hour);
                let x = hod + 0.5 - (center - half);
                if half > 0.0 && x > 0.0 && x < 2.0 * half {
                    cloud * (PI * x / (2.0 * half)).sin()
                } else {
                    0.0
                }
            }
            None => 0.0,
        };

        for b in 0..n {
            let diurnal = 1.0 + amp[b] * (2.0 * PI * (hod - peak[b]) / 24.0).cos();
            let noise = (sigma * eps[b] - 0.5 * sigma * sigma).exp();
            let consumption = base[b] * diurnal * weekly * seasonal * noise;
            net[b] = consumption - pv_cap[b] * solar;
        }
        let mut injections: Vec<f64> = net.iter().map(|l| -l).collect();
        let r = system.reference_bus();
        injections[r] = 0.0;
        let rest: f64 = injections.iter().sum();
        injections[r] = -rest;
        let theta = solver.solve(&injections)?;
        loads.extend_from_slice(&net);
        angles.extend_from_slice(&theta);
    }
    HourlyDataset::new(n, system.reference_bus(), pv.is_some(), loads, angles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_horizon_is_a_config_error() {
        let sys = BusSystem::eight_bus();
        let err = generate_year(&sys, &LoadProfileSpec::default(), None, 10, 1).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("n_t1")));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let sys = BusSystem::eight_bus();
        let pv = PvProfileSpec::default();
        let a = generate_year(&sys, &LoadProfileSpec::default(), Some(&pv), 120, 9).unwrap();
        let b = generate_year(&sys, &LoadProfileSpec::default(), Some(&pv), 120, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_year(&sys, &LoadProfileSpec::default(), Some(&pv), 120, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_pv_equals_unadjusted() {
        let sys = BusSystem::eight_bus();
        let pv = PvProfileSpec::zeroed();
        let a = generate_year(&sys, &LoadProfileSpec::default(), Some(&pv), 120, 3).unwrap();
        let b = generate_year(&sys, &LoadProfileSpec::default(), None, 120, 3).unwrap();
        assert!(a.pv_adjusted() && !b.pv_adjusted());
        for h in 0..a.n_hours() {
            assert_eq!(a.loads_at(h), b.loads_at(h));
            assert_eq!(a.angles_at(h), b.angles_at(h));
        }
    }

    #[test]
    fn loads_positive_without_pv() {
        let sys = BusSystem::eight_bus();
        let ds = generate_year(&sys, &LoadProfileSpec::default(), None, 120, 5).unwrap();
        for h in 0..ds.n_hours() {
            assert!(ds.loads_at(h).iter().all(|&l| l > 0.0));
        }
    }
}
