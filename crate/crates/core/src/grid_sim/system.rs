use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the zero-sum precondition for injections.
pub const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series susceptance in per-unit (`1/x` for a lossless line).
    pub susceptance: f64,
}

/// A validated bus system: connected, no self loops, strictly positive
/// susceptances and an in-range reference bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystem", into = "RawSystem")]
pub struct BusSystem {
    n_buses: usize,
    lines: Vec<Line>,
    reference_bus: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n_buses: usize,
    reference_bus: usize,
    lines: Vec<Line>,
}

impl TryFrom<RawSystem> for BusSystem {
    type Error = Error;

    fn try_from(raw: RawSystem) -> Result<Self> {
        BusSystem::new(raw.n_buses, raw.lines, raw.reference_bus)
    }
}

impl From<BusSystem> for RawSystem {
    fn from(s: BusSystem) -> Self {
        RawSystem {
            n_buses: s.n_buses,
            reference_bus: s.reference_bus,
            lines: s.lines,
        }
    }
}

impl BusSystem {
    pub fn new(n_buses: usize, lines: Vec<Line>, reference_bus: usize) -> Result<Self> {
        if n_buses == 0 {
            return Err(Error::Topology("system has no buses".into()));
        }
        if reference_bus >= n_buses {
            return Err(Error::Topology(format!(
                "reference bus {reference_bus} out of range for {n_buses} buses"
            )));
        }
        for (k, line) in lines.iter().enumerate() {
            if line.from >= n_buses || line.to >= n_buses {
                return Err(Error::Topology(format!(
                    "line {k} ({} - {}) references a bus outside 0..{n_buses}",
                    line.from, line.to
                )));
            }
            if line.from == line.to {
                return Err(Error::Topology(format!("line {k} is a self-loop on bus {}", line.from)));
            }
            if !(line.susceptance.is_finite() && line.susceptance > 0.0) {
                return Err(Error::Topology(format!(
                    "line {k} has non-positive susceptance {}",
                    line.susceptance
                )));
            }
        }
        let system = BusSystem {
            n_buses,
            lines,
            reference_bus,
        };
        if !system.is_connected() {
            return Err(Error::Topology("bus system is not connected".into()));
        }
        Ok(system)
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn reference_bus(&self) -> usize {
        self.reference_bus
    }

    pub fn neighbors(&self, bus: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .lines
            .iter()
            .filter_map(|l| {
                if l.from == bus {
                    Some(l.to)
                } else if l.to == bus {
                    Some(l.from)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_buses];
        let mut queue = VecDeque::from([self.reference_bus]);
        seen[self.reference_bus] = true;
        while let Some(b) = queue.pop_front() {
            for n in self.neighbors(b) {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Full nodal susceptance matrix (a weighted graph Laplacian).
    pub fn susceptance_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n_buses, self.n_buses);
        for l in &self.lines {
            b[(l.from, l.from)] += l.susceptance;
            b[(l.to, l.to)] += l.susceptance;
            b[(l.from, l.to)] -= l.susceptance;
            b[(l.to, l.from)] -= l.susceptance;
        }
        b
    }

    /// Radial eight-bus feeder with the substation (slack) at bus 7. Bus 0
    /// hangs off bus 1 alone, so its load is a function of `θ₀ − θ₁` only.
    pub fn eight_bus() -> Self {
        let lines = [
            (0, 1, 20.0),
            (1, 2, 15.0),
            (2, 7, 25.0),
            (3, 2, 12.0),
            (4, 3, 10.0),
            (5, 7, 18.0),
            (6, 5, 14.0),
        ];
        Self::from_triples(8, &lines, 7)
    }

    /// Meshed fourteen-bus network using the IEEE 14-bus branch reactances,
    /// slack at bus 0.
    pub fn fourteen_bus() -> Self {
        let reactances = [
            (1, 2, 0.05917),
            (1, 5, 0.22304),
            (2, 3, 0.19797),
            (2, 4, 0.17632),
            (2, 5, 0.17388),
            (3, 4, 0.17103),
            (4, 5, 0.04211),
            (4, 7, 0.20912),
            (4, 9, 0.55618),
            (5, 6, 0.25202),
            (6, 11, 0.19890),
            (6, 12, 0.25581),
            (6, 13, 0.13027),
            (7, 8, 0.17615),
            (7, 9, 0.11001),
            (9, 10, 0.08450),
            (9, 14, 0.27038),
            (10, 11, 0.19207),
            (12, 13, 0.19988),
            (13, 14, 0.34802),
        ];
        let lines: Vec<(usize, usize, f64)> =
            reactances.iter().map(|&(f, t, x)| (f - 1, t - 1, 1.0 / x)).collect();
        Self::from_triples(14, &lines, 0)
    }

    fn from_triples(n: usize, lines: &[(usize, usize, f64)], reference: usize) -> Self {
        let lines = lines
            .iter()
            .map(|&(from, to, susceptance)| Line { from, to, susceptance })
            .collect();
        BusSystem::new(n, lines, reference).expect("built-in system is valid")
    }

    /// Parses the TOML system description:
    ///
    /// ```toml
    /// n_buses = 3
    /// reference_bus = 0
    /// [[lines]]
    /// from = 0
    /// to = 1
    /// susceptance = 10.0
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("system description: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("bus system serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

/// Pre-factorized DC power-flow solver for one system.
///
/// Solves `B θ = P` on the reduced system obtained by deleting the reference
/// bus row and column, with `θ_ref = 0`.
#[derive(Debug, Clone)]
pub struct DcSolver {
    n_buses: usize,
    reference_bus: usize,
    b_full: DMatrix<f64>,
    reduced: Cholesky<f64, Dyn>,
}

impl DcSolver {
    pub fn new(system: &BusSystem) -> Result<Self> {
        let n = system.n_buses();
        let r = system.reference_bus();
        let b_full = system.susceptance_matrix();
        let keep: Vec<usize> = (0..n).filter(|&k| k != r).collect();
        let reduced = DMatrix::from_fn(keep.len(), keep.len(), |a, b| b_full[(keep[a], keep[b])]);
        let reduced = if keep.is_empty() {
            Cholesky::new(DMatrix::<f64>::zeros(0, 0))
        } else {
            Cholesky::new(reduced)
        }
        .ok_or_else(|| Error::Topology("reduced susceptance matrix is singular".into()))?;
        Ok(DcSolver {
            n_buses: n,
            reference_bus: r,
            b_full,
            reduced,
        })
    }

    pub fn solve(&self, injections: &[f64]) -> Result<Vec<f64>> {
        if injections.len() != self.n_buses {
            return Err(Error::DimensionMismatch {
                expected: self.n_buses,
                got: injections.len(),
            });
        }
        if injections.iter().any(|p| !p.is_finite()) {
            return Err(Error::Input("non-finite injection".into()));
        }
        let total: f64 = injections.iter().sum();
        if total.abs() > BALANCE_TOL {
            return Err(Error::Input(format!(
                "injections are unbalanced: sum = {total:.3e}"
            )));
        }
        let rhs = DVector::from_iterator(
            self.n_buses - 1,
            (0..self.n_buses)
                .filter(|&k| k != self.reference_bus)
                .map(|k| injections[k]),
        );
        let reduced_theta = self.reduced.solve(&rhs);
        let mut theta = vec![0.0; self.n_buses];
        let mut it = reduced_theta.iter();
        for (k, t) in theta.iter_mut().enumerate() {
            if k != self.reference_bus {
                *t = *it.next().expect("reduced solution length");
            }
        }
        Ok(theta)
    }

    /// `B θ`, the injections implied by a set of angles.
    pub fn injections_from_angles(&self, theta: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        (&self.b_full * t).iter().copied().collect()
    }
}

/// One-shot DC power flow; prefer [`DcSolver`] when solving many hours.
pub fn solve_dc_power_flow(system: &BusSystem, injections: &[f64]) -> Result<Vec<f64>> {
    DcSolver::new(system)?.solve(injections)
}
