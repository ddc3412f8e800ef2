//! Point and interval forecast scores over a prediction day.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean absolute percentage error as a fraction (`0.1` means 10%).
pub fn mape(actuals: &[f64], points: &[f64]) -> Result<f64> {
    if actuals.len() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: actuals.len(),
            got: points.len(),
        });
    }
    if actuals.is_empty() {
        return Err(Error::Input("MAPE of an empty series".into()));
    }
    let mut total = 0.0;
    for (h, (a, p)) in actuals.iter().zip(points).enumerate() {
        if *a == 0.0 {
            return Err(Error::ZeroActual(h));
        }
        total += ((a - p) / a).abs();
    }
    Ok(total / actuals.len() as f64)
}

/// Number of actuals with `lower ≤ actual ≤ upper`.
pub fn covered_count(actuals: &[f64], intervals: &[(f64, f64)]) -> Result<usize> {
    if actuals.len() != intervals.len() {
        return Err(Error::DimensionMismatch {
            expected: actuals.len(),
            got: intervals.len(),
        });
    }
    let mut count = 0;
    for (h, (a, (lo, hi))) in actuals.iter().zip(intervals).enumerate() {
        if lo > hi {
            return Err(Error::Input(format!("interval at hour {h} has lower {lo} > upper {hi}")));
        }
        if lo <= a && a <= hi {
            count += 1;
        }
    }
    Ok(count)
}

/// Fraction of actuals inside their intervals, boundaries included.
pub fn coverage(actuals: &[f64], intervals: &[(f64, f64)]) -> Result<f64> {
    if actuals.is_empty() {
        return Err(Error::Input("coverage of an empty series".into()));
    }
    Ok(covered_count(actuals, intervals)? as f64 / actuals.len() as f64)
}

/// Scores for one customer and prediction day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayEvaluation {
    pub customer: usize,
    pub day: usize,
    pub mape: f64,
    pub cp: f64,
    pub covered_count: usize,
    pub hours: usize,
}

impl DayEvaluation {
    pub fn new(
        customer: usize,
        day: usize,
        actuals: &[f64],
        points: &[f64],
        intervals: &[(f64, f64)],
    ) -> Result<Self> {
        let covered = covered_count(actuals, intervals)?;
        Ok(DayEvaluation {
            customer,
            day,
            mape: mape(actuals, points)?,
            cp: covered as f64 / actuals.len() as f64,
            covered_count: covered,
            hours: actuals.len(),
        })
    }
}

/// Writes the `customer,day,mape,cp` summary.
pub fn write_summary_csv<W: Write>(writer: W, days: &[DayEvaluation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["customer", "day", "mape", "cp"])?;
    for d in days {
        w.write_record([
            d.customer.to_string(),
            d.day.to_string(),
            format!("{:.12e}", d.mape),
            format!("{:.12e}", d.cp),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Five-number summary used for box plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

/// Quartiles with linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Result<Quartiles> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return Err(Error::Input("quartiles need a non-empty NaN-free sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Ok(Quartiles {
        min: v[0],
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        max: v[v.len() - 1],
        mean: v.iter().sum::<f64>() / v.len() as f64,
        count: v.len(),
    })
}
