use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Nonlinearity;
use crate::error::{Error, Result};

/// Grid sizes for the nonlinearity lookup table.
///
/// Accuracy degrades once `√s` approaches `u_max`, since the pre-activation
/// grid then truncates the Gaussian; keep kernel variances well below
/// `(u_max / 4)²` when tight tolerances matter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableParams {
    /// Number of pre-activation points `n_g` in `[-u_max, u_max]`.
    pub n_grid: usize,
    pub u_max: f64,
    /// Number of variance points `n_v` in `[0, s_max]`.
    pub n_var: usize,
    pub s_max: f64,
    /// Number of correlation points in `[-1, 1]`.
    pub n_corr: usize,
}

impl Default for TableParams {
    fn default() -> Self {
        TableParams {
            n_grid: 401,
            u_max: 10.0,
            n_var: 301,
            s_max: 64.0,
            n_corr: 301,
        }
    }
}

impl TableParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid < 3 || self.n_var < 3 || self.n_corr < 3 {
            return Err(Error::Config("table grids need at least 3 points each".into()));
        }
        if !(self.u_max > 0.0 && self.s_max > 0.0) {
            return Err(Error::Config("u_max and s_max must be positive".into()));
        }
        if self.s_max >= self.u_max * self.u_max {
            return Err(Error::Config(format!(
                "s_max ({}) must be below u_max² ({})",
                self.s_max,
                self.u_max * self.u_max
            )));
        }
        Ok(())
    }

    /// Every grid doubled (odd counts kept odd so the origin stays on the grid).
    pub fn refined(&self) -> Self {
        TableParams {
            n_grid: 2 * self.n_grid - 1,
            n_var: 2 * self.n_var - 1,
            n_corr: 2 * self.n_corr - 1,
            ..*self
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { hi } else { lo + step * k as f64 })
        .collect()
}

/// Lookup table for `F_φ(s, c) = E[φ(u)φ(v)]` with `(u, v)` zero-mean
/// bivariate normal, marginal variance `s` and correlation `c`.
///
/// Each entry is the normalized grid sum
/// `Σ_ab φ(u_a)φ(u_b) w_ab / Σ_ab w_ab` over the pre-activation grid.
/// Variance rows are computed on first use; [`materialize`](Self::materialize)
/// fills the whole table.
#[derive(Debug)]
pub struct NonlinearityTable {
    nonlinearity: Nonlinearity,
    params: TableParams,
    u: Vec<f64>,
    s: Vec<f64>,
    c: Vec<f64>,
    phi: Vec<f64>,
    rows: Vec<OnceLock<Vec<f64>>>,
}

impl NonlinearityTable {
    pub fn build(nonlinearity: Nonlinearity, params: TableParams) -> Result<Self> {
        params.validate()?;
        let u = linspace(-params.u_max, params.u_max, params.n_grid);
        let phi = u.iter().map(|&x| nonlinearity.apply(x)).collect();
        Ok(NonlinearityTable {
            nonlinearity,
            params,
            s: linspace(0.0, params.s_max, params.n_var),
            c: linspace(-1.0, 1.0, params.n_corr),
            u,
            phi,
            rows: (0..params.n_var).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn params(&self) -> &TableParams {
        &self.params
    }

    pub fn preactivation_grid(&self) -> &[f64] {
        &self.u
    }

    pub fn variance_grid(&self) -> &[f64] {
        &self.s
    }

    pub fn correlation_grid(&self) -> &[f64] {
        &self.c
    }

    pub fn value(&self, var_index: usize, corr_index: usize) -> f64 {
        self.row(var_index)[corr_index]
    }

    pub fn row(&self, var_index: usize) -> &[f64] {
        self.rows[var_index].get_or_init(|| self.compute_row(self.s[var_index]))
    }

    /// Number of variance rows computed so far.
    pub fn materialized_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.get().is_some()).count()
    }

    pub fn materialize(&self) {
        (0..self.params.n_var).into_par_iter().for_each(|i| {
            self.row(i);
        });
    }

    fn compute_row(&self, s: f64) -> Vec<f64> {
        self.c.iter().map(|&c| self.grid_expectation(s, c)).collect()
    }

    /// Normalized grid sum at `(s, c)`.
    ///
    /// The quadratic form is split as
    /// `[(u_a+u_b)²/(1+c) + (u_a−u_b)²/(1−c)] / (4s)`; on a uniform grid both
    /// pieces depend only on `a+b` and `|a−b|`, and the `c = ±1` and `s = 0`
    /// limits are taken exactly instead of inverting a singular covariance.
    fn grid_expectation(&self, s: f64, c: f64) -> f64 {
        let n = self.u.len();
        if s <= 0.0 {
            let z = self.nonlinearity.apply(0.0);
            return z * z;
        }
        let h = self.u[1] - self.u[0];
        let u_max = self.params.u_max;
        let plus = 1.0 + c;
        let minus = 1.0 - c;
        // Exponents for the sum and difference directions; `None` marks the
        // degenerate direction where only the zero offset carries mass.
        let sum_exp: Vec<f64> = (0..2 * n - 1)
            .map(|k| {
                let w = k as f64 * h - 2.0 * u_max;
                if plus <= 0.0 {
                    if k == n - 1 { 0.0 } else { f64::INFINITY }
                } else {
                    w * w / (4.0 * s * plus)
                }
            })
            .collect();
        let diff_exp: Vec<f64> = (0..n)
            .map(|m| {
                let w = m as f64 * h;
                if minus <= 0.0 {
                    if m == 0 { 0.0 } else { f64::INFINITY }
                } else {
                    w * w / (4.0 * s * minus)
                }
            })
            .collect();
        let shift = sum_exp.iter().cloned().fold(f64::INFINITY, f64::min);
        let (num, den) = self.weighted_sums(&sum_exp, &diff_exp, shift);
        if den > 0.0 && den.is_finite() {
            return num / den;
        }
        // Everything underflowed relative to the coarse shift: use the exact
        // minimum over grid pairs.
        let mut exact = f64::INFINITY;
        for a in 0..n {
            for b in a..n {
                exact = exact.min(sum_exp[a + b] + diff_exp[b - a]);
            }
        }
        let (num, den) = self.weighted_sums(&sum_exp, &diff_exp, exact);
        num / den
    }

    fn weighted_sums(&self, sum_exp: &[f64], diff_exp: &[f64], shift: f64) -> (f64, f64) {
        let n = self.u.len();
        let e_sum: Vec<f64> = sum_exp.iter().map(|e| (-(e - shift)).exp()).collect();
        let e_diff: Vec<f64> = diff_exp.iter().map(|e| (-e).exp()).collect();
        let phi = &self.phi;
        let mut num = 0.0;
        let mut den = 0.0;
        for a in 0..n {
            // Diagonal term, then the strictly upper triangle counted twice.
            let w = e_sum[2 * a] * e_diff[0];
            den += w;
            num += phi[a] * phi[a] * w;
            let mut row_den = 0.0;
            let mut row_num = 0.0;
            for b in (a + 1)..n {
                let w = e_sum[a + b] * e_diff[b - a];
                row_den += w;
                row_num += phi[b] * w;
            }
            den += 2.0 * row_den;
            num += 2.0 * phi[a] * row_num;
        }
        (num, den)
    }

    /// Bilinear interpolation at variance `s` and correlation `c`.
    pub fn interpolate(&self, s: f64, c: f64) -> Result<f64> {
        Ok(self.slice_at(s)?.at(c))
    }

    /// Pre-resolves the variance coordinate so that many correlations can be
    /// interpolated at the same `s` cheaply.
    pub(crate) fn slice_at(&self, s: f64) -> Result<VarianceSlice<'_>> {
        let s_max = self.params.s_max;
        if !s.is_finite() || s < -1e-12 || s > s_max * (1.0 + 1e-9) {
            return Err(Error::OutOfRange { value: s, max: s_max });
        }
        let s = s.clamp(0.0, s_max);
        let (lo, t) = locate(&self.s, s);
        Ok(VarianceSlice {
            lo: self.row(lo),
            hi: self.row(lo + 1),
            t,
            c_grid: &self.c,
        })
    }

    /// Writes the computed rows to a versioned binary cache file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        write_header(&mut out, self.nonlinearity, &self.params);
        for row in &self.rows {
            match row.get() {
                Some(values) => {
                    out.push(1u8);
                    for v in values {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                None => out.push(0u8),
            }
        }
        let tmp = path.with_extension("tmp");
        std::fs::File::create(&tmp)?.write_all(&out)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Loads a cache file; its header must match `(nonlinearity, params)`
    /// exactly.
    pub fn load(path: &Path, nonlinearity: Nonlinearity, params: TableParams) -> Result<Self> {
        let table = Self::build(nonlinearity, params)?;
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut expected = Vec::new();
        write_header(&mut expected, nonlinearity, &params);
        if bytes.len() < expected.len() || bytes[..expected.len()] != expected[..] {
            return Err(Error::Parse(format!(
                "table cache {} does not match the requested nonlinearity/grid",
                path.display()
            )));
        }
        let mut pos = expected.len();
        for row in &table.rows {
            let flag = *bytes
                .get(pos)
                .ok_or_else(|| Error::Parse("truncated table cache".into()))?;
            pos += 1;
            if flag == 1 {
                let len = params.n_corr * 8;
                let chunk = bytes
                    .get(pos..pos + len)
                    .ok_or_else(|| Error::Parse("truncated table cache".into()))?;
                let values = chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                    .collect();
                let _ = row.set(values);
                pos += len;
            }
        }
        if pos != bytes.len() {
            return Err(Error::Parse("trailing bytes in table cache".into()));
        }
        Ok(table)
    }

    /// Cache file name encoding the nonlinearity and grid.
    pub fn cache_file_name(nonlinearity: Nonlinearity, p: &TableParams) -> String {
        format!(
            "nngp-{}-g{}-u{}-v{}-s{}-c{}.bin",
            nonlinearity.name(),
            p.n_grid,
            p.u_max,
            p.n_var,
            p.s_max,
            p.n_corr
        )
    }
}

const CACHE_MAGIC: &[u8; 8] = b"NNGPTAB\0";
const CACHE_VERSION: u32 = 1;

// Header layout (little endian): magic[8], version u32, nonlinearity u8,
// 3 zero bytes, n_grid u64, u_max f64, n_var u64, s_max f64, n_corr u64.
// Followed per variance row by a presence byte and, if present, n_corr f64s.
fn write_header(out: &mut Vec<u8>, nonlinearity: Nonlinearity, p: &TableParams) {
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&[nonlinearity.code(), 0, 0, 0]);
    out.extend_from_slice(&(p.n_grid as u64).to_le_bytes());
    out.extend_from_slice(&p.u_max.to_le_bytes());
    out.extend_from_slice(&(p.n_var as u64).to_le_bytes());
    out.extend_from_slice(&p.s_max.to_le_bytes());
    out.extend_from_slice(&(p.n_corr as u64).to_le_bytes());
}

/// Index of the left grid point and the fractional offset towards the next.
fn locate(grid: &[f64], x: f64) -> (usize, f64) {
    let n = grid.len();
    let step = (grid[n - 1] - grid[0]) / (n - 1) as f64;
    let pos = ((x - grid[0]) / step).max(0.0);
    let lo = (pos.floor() as usize).min(n - 2);
    let t = ((x - grid[lo]) / (grid[lo + 1] - grid[lo])).clamp(0.0, 1.0);
    (lo, t)
}

pub(crate) struct VarianceSlice<'a> {
    lo: &'a [f64],
    hi: &'a [f64],
    t: f64,
    c_grid: &'a [f64],
}

impl VarianceSlice<'_> {
    #[inline]
    pub(crate) fn at(&self, c: f64) -> f64 {
        let c = c.clamp(-1.0, 1.0);
        let (j, v) = locate(self.c_grid, c);
        let f_lo = self.lo[j] * (1.0 - v) + self.lo[j + 1] * v;
        let f_hi = self.hi[j] * (1.0 - v) + self.hi[j + 1] * v;
        f_lo * (1.0 - self.t) + f_hi * self.t
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    // Beyond five standard deviations inside the pre-activation grid the
    // truncated tails start to show.
    const SAFE_VAR: f64 = 4.0;

    fn small() -> TableParams {
        TableParams {
            n_grid: 201,
            u_max: 10.0,
            n_var: 31,
            s_max: 6.0,
            n_corr: 41,
        }
    }

    #[test]
    fn identity_entries_match_covariance() {
        let t = NonlinearityTable::build(Nonlinearity::Identity, small()).unwrap();
        for i in 0..t.variance_grid().len() {
            let s = t.variance_grid()[i];
            if s > SAFE_VAR {
                continue;
            }
            for j in 0..t.correlation_grid().len() {
                let c = t.correlation_grid()[j];
                assert!((t.value(i, j) - s * c).abs() <= 1e-4 * s + 1e-15, "s={s} c={c}: {}", t.value(i, j));
            }
        }
    }

    #[test]
    fn relu_unit_correlation_is_half_variance() {
        let t = NonlinearityTable::build(Nonlinearity::Relu, small()).unwrap();
        let last = t.correlation_grid().len() - 1;
        for i in 0..t.variance_grid().len() {
            let s = t.variance_grid()[i];
            if s <= SAFE_VAR {
                assert!((t.value(i, last) - s / 2.0).abs() <= 1e-4 * s + 1e-15);
            }
        }
    }

    #[test]
    fn relu_zero_correlation_is_squared_mean() {
        let t = NonlinearityTable::build(Nonlinearity::Relu, small()).unwrap();
        let mid = t.correlation_grid().len() / 2;
        assert_eq!(t.correlation_grid()[mid], 0.0);
        // The kink at zero costs O(h²) in the grid mean: about h²/(12π).
        let h = t.preactivation_grid()[1] - t.preactivation_grid()[0];
        for i in 0..t.variance_grid().len() {
            let s = t.variance_grid()[i];
            if s <= SAFE_VAR {
                assert!((t.value(i, mid) - s / (2.0 * PI)).abs() < 2.0 * h * h / (12.0 * PI));
            }
        }
    }

    #[test]
    fn entries_finite_at_correlation_extremes() {
        for phi in [Nonlinearity::Relu, Nonlinearity::Tanh, Nonlinearity::Identity] {
            let t = NonlinearityTable::build(phi, small()).unwrap();
            t.materialize();
            for i in 0..t.variance_grid().len() {
                assert!(t.row(i).iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn rows_are_lazy() {
        let t = NonlinearityTable::build(Nonlinearity::Relu, TableParams::default()).unwrap();
        assert_eq!(t.materialized_rows(), 0);
        t.interpolate(2.0, 0.3).unwrap();
        assert_eq!(t.materialized_rows(), 2);
    }

    #[test]
    fn out_of_range_variance_is_an_error() {
        let t = NonlinearityTable::build(Nonlinearity::Relu, small()).unwrap();
        assert!(matches!(t.interpolate(7.0, 0.0), Err(Error::OutOfRange { .. })));
        assert!(t.interpolate(6.0, 0.0).is_ok());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = small();
        p.s_max = 100.0;
        assert!(NonlinearityTable::build(Nonlinearity::Relu, p).is_err());
        p = small();
        p.n_corr = 2;
        assert!(NonlinearityTable::build(Nonlinearity::Relu, p).is_err());
    }

    #[test]
    fn cache_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(NonlinearityTable::cache_file_name(Nonlinearity::Tanh, &small()));
        let t = NonlinearityTable::build(Nonlinearity::Tanh, small()).unwrap();
        t.row(3);
        t.row(7);
        t.save(&path).unwrap();
        let back = NonlinearityTable::load(&path, Nonlinearity::Tanh, small()).unwrap();
        assert_eq!(back.materialized_rows(), 2);
        assert_eq!(back.row(3), t.row(3));
        assert!(NonlinearityTable::load(&path, Nonlinearity::Relu, small()).is_err());
        let mut other = small();
        other.n_corr = 43;
        assert!(NonlinearityTable::load(&path, Nonlinearity::Tanh, other).is_err());
    }
}
