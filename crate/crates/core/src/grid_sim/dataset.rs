use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Hourly per-bus loads and phase angles over a simulated horizon.
///
/// Hours are `0..n_hours()`. Storage is row-major by hour.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyDataset {
    n_buses: usize,
    reference_bus: usize,
    pv_adjusted: bool,
    loads: Vec<f64>,
    angles: Vec<f64>,
}

impl HourlyDataset {
    pub fn new(
        n_buses: usize,
        reference_bus: usize,
        pv_adjusted: bool,
        loads: Vec<f64>,
        angles: Vec<f64>,
    ) -> Result<Self> {
        if n_buses == 0 || reference_bus >= n_buses {
            return Err(Error::Input("invalid bus count or reference bus".into()));
        }
        if loads.len() != angles.len() || loads.len() % n_buses != 0 {
            return Err(Error::Input(format!(
                "loads ({}) and angles ({}) must both be hours x {n_buses}",
                loads.len(),
                angles.len()
            )));
        }
        if loads.iter().chain(&angles).any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset contains non-finite entries".into()));
        }
        let n_hours = loads.len() / n_buses;
        for h in 0..n_hours {
            if angles[h * n_buses + reference_bus] != 0.0 {
                return Err(Error::Input(format!(
                    "reference bus {reference_bus} has non-zero angle at hour {h}"
                )));
            }
        }
        Ok(HourlyDataset {
            n_buses,
            reference_bus,
            pv_adjusted,
            loads,
            angles,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn n_hours(&self) -> usize {
        self.loads.len() / self.n_buses
    }

    pub fn reference_bus(&self) -> usize {
        self.reference_bus
    }

    pub fn pv_adjusted(&self) -> bool {
        self.pv_adjusted
    }

    pub fn load(&self, hour: usize, bus: usize) -> f64 {
        self.loads[hour * self.n_buses + bus]
    }

    pub fn angle(&self, hour: usize, bus: usize) -> f64 {
        self.angles[hour * self.n_buses + bus]
    }

    pub fn loads_at(&self, hour: usize) -> &[f64] {
        &self.loads[hour * self.n_buses..(hour + 1) * self.n_buses]
    }

    pub fn angles_at(&self, hour: usize) -> &[f64] {
        &self.angles[hour * self.n_buses..(hour + 1) * self.n_buses]
    }

    /// `θ_{i,k} = θ_i − θ_k` at `hour`.
    pub fn theta_diff(&self, hour: usize, i: usize, k: usize) -> f64 {
        self.angle(hour, i) - self.angle(hour, k)
    }

    /// Net injections implied by the stored loads: `−load` at every bus, with
    /// the reference (slack) bus balancing the system.
    pub fn injections(&self, hour: usize) -> Vec<f64> {
        let mut p: Vec<f64> = self.loads_at(hour).iter().map(|l| -l).collect();
        p[self.reference_bus] = 0.0;
        let rest: f64 = p.iter().sum();
        p[self.reference_bus] = -rest;
        p
    }

    /// Copy with every load and angle at hours `>= from_hour` replaced by
    /// `value` (the reference angle stays 0). Used to check causality.
    pub fn poisoned_from(&self, from_hour: usize, value: f64) -> HourlyDataset {
        let mut out = self.clone();
        let start = from_hour.min(self.n_hours()) * self.n_buses;
        out.loads[start..].iter_mut().for_each(|v| *v = value);
        for (k, v) in out.angles[start..].iter_mut().enumerate() {
            if k % self.n_buses != self.reference_bus {
                *v = value;
            }
        }
        out
    }

    /// Writes the `hour,bus,load,theta` CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["hour", "bus", "load", "theta"])?;
        for h in 0..self.n_hours() {
            for b in 0..self.n_buses {
                w.write_record(&[
                    h.to_string(),
                    b.to_string(),
                    format!("{:.16e}", self.load(h, b)),
                    format!("{:.16e}", self.angle(h, b)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv). The reference
    /// bus is the bus whose angle is exactly zero at every hour.
    pub fn read_csv<R: Read>(reader: R, pv_adjusted: bool) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["hour", "bus", "load", "theta"] {
            return Err(Error::Parse(format!(
                "expected header hour,bus,load,theta, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<&str> {
                rec.get(k).ok_or_else(|| Error::Parse("short CSV row".into()))
            };
            let hour: usize = parse(0)?.parse().map_err(|e| Error::Parse(format!("hour: {e}")))?;
            let bus: usize = parse(1)?.parse().map_err(|e| Error::Parse(format!("bus: {e}")))?;
            let load: f64 = parse(2)?.parse().map_err(|e| Error::Parse(format!("load: {e}")))?;
            let theta: f64 = parse(3)?.parse().map_err(|e| Error::Parse(format!("theta: {e}")))?;
            rows.push((hour, bus, load, theta));
        }
        let n_hours = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let n_buses = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if n_hours == 0 || rows.len() != n_hours * n_buses {
            return Err(Error::Parse(format!(
                "dataset has {} rows, expected {n_hours} hours x {n_buses} buses",
                rows.len()
            )));
        }
        let mut loads = vec![f64::NAN; n_hours * n_buses];
        let mut angles = vec![f64::NAN; n_hours * n_buses];
        for (h, b, l, t) in rows {
            loads[h * n_buses + b] = l;
            angles[h * n_buses + b] = t;
        }
        if loads.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse("dataset has missing (hour, bus) entries".into()));
        }
        let reference_bus = (0..n_buses)
            .find(|&b| (0..n_hours).all(|h| angles[h * n_buses + b] == 0.0))
            .ok_or_else(|| Error::Parse("no bus has a zero angle at every hour".into()))?;
        HourlyDataset::new(n_buses, reference_bus, pv_adjusted, loads, angles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HourlyDataset {
        HourlyDataset::new(
            2,
            0,
            false,
            vec![1.0, 2.0, 1.5, 2.5, 0.5, 0.25],
            vec![0.0, -0.2, 0.0, -0.25, 0.0, 0.0312],
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = tiny();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = HourlyDataset::read_csv(buf.as_slice(), false).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn missing_rows_rejected() {
        let text = "hour,bus,load,theta\n0,0,1.0,0.0\n0,1,1.0,0.1\n1,0,1.0,0.0\n";
        assert!(HourlyDataset::read_csv(text.as_bytes(), false).is_err());
    }

    #[test]
    fn theta_diff_is_antisymmetric() {
        let ds = tiny();
        for h in 0..ds.n_hours() {
            assert_eq!(ds.theta_diff(h, 0, 1), -ds.theta_diff(h, 1, 0));
        }
    }

    #[test]
    fn poison_keeps_reference_zero() {
        let p = tiny().poisoned_from(1, 9.0);
        assert_eq!(p.angle(2, 0), 0.0);
        assert_eq!(p.angle(2, 1), 9.0);
        assert_eq!(p.load(0, 1), 2.0);
    }
}
