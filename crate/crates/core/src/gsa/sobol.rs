use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::decompose::FunctionalDecomposition;
use super::mixture::CoefficientSampler;
use crate::error::{Error, Result};
use crate::nigp::NigpModel;
use crate::nngp::NngpModel;

/// Hours per block in the first-stage importance aggregate.
pub const HOURS_PER_BLOCK: usize = 24;

/// A model whose output variance is being apportioned.
pub trait Surrogate: Sync {
    fn input_dim(&self) -> usize;

    /// Evaluates every row of `inputs`.
    fn eval_batch(&self, inputs: &DMatrix<f64>) -> Result<Vec<f64>>;
}

/// Adapts a pointwise function into a [`Surrogate`].
pub struct FnSurrogate<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnSurrogate<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnSurrogate { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Surrogate for FnSurrogate<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn eval_batch(&self, inputs: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok((0..inputs.nrows())
            .into_par_iter()
            .map(|r| {
                let row: Vec<f64> = inputs.row(r).iter().cloned().collect();
                (self.f)(&row)
            })
            .collect())
    }
}

impl Surrogate for NngpModel {
    fn input_dim(&self) -> usize {
        NngpModel::input_dim(self)
    }

    fn eval_batch(&self, inputs: &DMatrix<f64>) -> Result<Vec<f64>> {
        // Chunked so the cross-kernel matrix stays small.
        let mut out = Vec::with_capacity(inputs.nrows());
        let chunk = 2048;
        let mut start = 0;
        while start < inputs.nrows() {
            let len = chunk.min(inputs.nrows() - start);
            out.extend(self.predict_mean_batch(&inputs.rows(start, len).into_owned())?);
            start += len;
        }
        Ok(out)
    }
}

impl Surrogate for NigpModel {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn eval_batch(&self, inputs: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..inputs.nrows())
            .into_par_iter()
            .map(|r| {
                let row: Vec<f64> = inputs.row(r).iter().cloned().collect();
                self.predict_mean(&row)
            })
            .collect()
    }
}

/// The three independent `n × m` sample matrices of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl SampleMatrices {
    /// Fills `A`, `B`, `C` row by row from ChaCha streams 0, 1 and 2 of
    /// `seed`.
    pub fn from_sampler<F>(n: usize, m: usize, seed: u64, mut draw: F) -> Result<Self>
    where
        F: FnMut(&mut ChaCha8Rng) -> Vec<f64>,
    {
        let mut make = |stream: u64| -> Result<DMatrix<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut data = Vec::with_capacity(n * m);
            for _ in 0..n {
                let row = draw(&mut rng);
                if row.len() != m {
                    return Err(Error::DimensionMismatch { expected: m, got: row.len() });
                }
                data.extend(row);
            }
            Ok(DMatrix::from_row_slice(n, m, &data))
        };
        Ok(SampleMatrices {
            a: make(0)?,
            b: make(1)?,
            c: make(2)?,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.ncols()
    }

    /// `A` with column `i` taken from `B`.
    pub fn a_b(&self, i: usize) -> DMatrix<f64> {
        let mut out = self.a.clone();
        out.set_column(i, &self.b.column(i));
        out
    }
}

/// Draws coefficient vectors from `sampler` and reconstructs them into input
/// vectors of length `decomposition.grid_len()`.
pub fn generate_matrices(
    sampler: &CoefficientSampler,
    decomposition: &FunctionalDecomposition,
    n: usize,
    seed: u64,
) -> Result<SampleMatrices> {
    if n < 100 {
        return Err(Error::Config(format!("Monte Carlo sample size must be at least 100, got {n}")));
    }
    if sampler.dim() != decomposition.n_components() {
        return Err(Error::DimensionMismatch {
            expected: decomposition.n_components(),
            got: sampler.dim(),
        });
    }
    SampleMatrices::from_sampler(n, decomposition.grid_len(), seed, |rng| {
        let beta = sampler.sample(rng);
        decomposition.reconstruct(beta.as_slice()).iter().cloned().collect()
    })
}

/// Caches surrogate evaluations on `A`, `B` and `C` so that indices for many
/// inputs share them.
pub struct SobolEstimator<'a, S: Surrogate + ?Sized> {
    surrogate: &'a S,
    matrices: &'a SampleMatrices,
    f_a: Vec<f64>,
    f_b: Option<Vec<f64>>,
    variance: f64,
    fourth_moment: f64,
}

impl<'a, S: Surrogate + ?Sized> SobolEstimator<'a, S> {
    pub fn new(surrogate: &'a S, matrices: &'a SampleMatrices, with_first_order: bool) -> Result<Self> {
        if surrogate.input_dim() != matrices.m() {
            return Err(Error::DimensionMismatch {
                expected: surrogate.input_dim(),
                got: matrices.m(),
            });
        }
        let f_a = surrogate.eval_batch(&matrices.a)?;
        let f_c = surrogate.eval_batch(&matrices.c)?;
        let f_b = if with_first_order {
            Some(surrogate.eval_batch(&matrices.b)?)
        } else {
            None
        };
        let n = f_c.len() as f64;
        let mean = f_c.iter().sum::<f64>() / n;
        let variance = f_c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let fourth_moment = f_c.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::UndefinedIndex(format!(
                "surrogate output variance is {variance}; indices are undefined"
            )));
        }
        Ok(SobolEstimator {
            surrogate,
            matrices,
            f_a,
            f_b,
            variance,
            fourth_moment,
        })
    }

    /// Output variance estimated from `f(C)`.
    pub fn output_variance(&self) -> f64 {
        self.variance
    }

    fn eval_ab(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.matrices.m() {
            return Err(Error::DimensionMismatch {
                expected: self.matrices.m(),
                got: i,
            });
        }
        self.surrogate.eval_batch(&self.matrices.a_b(i))
    }

    /// Total index and delta-method standard error,
    /// `Ŝ_Ti = Σ_j (f(A)_j − f(A_B^(i))_j)² / (2n) / V(f(C))`.
    pub fn total_index(&self, i: usize) -> Result<(f64, f64)> {
        let f_ab = self.eval_ab(i)?;
        Ok(self.total_from(&f_ab))
    }

    fn total_from(&self, f_ab: &[f64]) -> (f64, f64) {
        let n = f_ab.len() as f64;
        let d: Vec<f64> = self.f_a.iter().zip(f_ab).map(|(a, b)| 0.5 * (a - b).powi(2)).collect();
        let num = d.iter().sum::<f64>() / n;
        let num_var = d.iter().map(|v| (v - num).powi(2)).sum::<f64>() / (n - 1.0) / n;
        let v = self.variance;
        let v_var = ((self.fourth_moment - v * v) / n).max(0.0);
        let est = num / v;
        let se = (num_var / (v * v) + num * num * v_var / v.powi(4)).sqrt();
        (est, se)
    }

    /// Companion first-order estimate `(1/n) Σ f(B)(f(A_B^(i)) − f(A)) / V`
    /// with its standard error. Requires `with_first_order`.
    pub fn first_order_index(&self, i: usize) -> Result<(f64, f64)> {
        let f_ab = self.eval_ab(i)?;
        self.first_from(&f_ab)
    }

    fn first_from(&self, f_ab: &[f64]) -> Result<(f64, f64)> {
        let f_b = self
            .f_b
            .as_ref()
            .ok_or_else(|| Error::Config("first-order indices need f(B); enable them".into()))?;
        let n = f_ab.len() as f64;
        let t: Vec<f64> = f_b
            .iter()
            .zip(f_ab)
            .zip(&self.f_a)
            .map(|((b, ab), a)| b * (ab - a))
            .collect();
        let num = t.iter().sum::<f64>() / n;
        let num_var = t.iter().map(|v| (v - num).powi(2)).sum::<f64>() / (n - 1.0) / n;
        let v = self.variance;
        let v_var = ((self.fourth_moment - v * v) / n).max(0.0);
        Ok((num / v, (num_var / (v * v) + num * num * v_var / v.powi(4)).sqrt()))
    }

    /// Indices for every input, evaluated in index order.
    pub fn report(&self) -> Result<SensitivityReport> {
        let m = self.matrices.m();
        let mut total = Vec::with_capacity(m);
        let mut errs = Vec::with_capacity(m);
        let mut first = self.f_b.as_ref().map(|_| Vec::with_capacity(m));
        let mut first_errs = self.f_b.as_ref().map(|_| Vec::with_capacity(m));
        for i in 0..m {
            let f_ab = self.eval_ab(i)?;
            let (t, e) = self.total_from(&f_ab);
            total.push(t);
            errs.push(e);
            if let (Some(f), Some(fe)) = (first.as_mut(), first_errs.as_mut()) {
                let (s, se) = self.first_from(&f_ab)?;
                f.push(s);
                fe.push(se);
            }
        }
        Ok(SensitivityReport {
            total_indices: total,
            std_errors: errs,
            first_order: first,
            first_order_std_errors: first_errs,
            sample_size: self.matrices.n(),
            aggregates: None,
        })
    }
}

/// Single total index, evaluating `f(A)` and `f(C)` on the fly.
pub fn jansen_total_index<S: Surrogate + ?Sized>(
    surrogate: &S,
    matrices: &SampleMatrices,
    i: usize,
) -> Result<(f64, f64)> {
    SobolEstimator::new(surrogate, matrices, false)?.total_index(i)
}

/// Estimated sensitivity indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub total_indices: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub first_order: Option<Vec<f64>>,
    pub first_order_std_errors: Option<Vec<f64>>,
    /// Monte Carlo sample size `n`.
    pub sample_size: usize,
    /// Per-block sums of total indices (first-stage use).
    pub aggregates: Option<Vec<f64>>,
}

impl SensitivityReport {
    /// Writes `feature,total_index,std_error`. Feature labels default to the
    /// input index.
    pub fn write_indices_csv<W: Write>(&self, writer: W, labels: Option<&[String]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "total_index", "std_error"])?;
        for (i, (t, e)) in self.total_indices.iter().zip(&self.std_errors).enumerate() {
            let label = labels.and_then(|l| l.get(i).cloned()).unwrap_or_else(|| i.to_string());
            w.write_record([label, format!("{t:.12e}"), format!("{e:.12e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `block,H_value`; errors when no aggregates were computed.
    pub fn write_aggregates_csv<W: Write>(&self, writer: W, labels: Option<&[String]>) -> Result<()> {
        let h = self
            .aggregates
            .as_ref()
            .ok_or_else(|| Error::Input("report has no block aggregates".into()))?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["block", "H_value"])?;
        for (i, v) in h.iter().enumerate() {
            let label = labels.and_then(|l| l.get(i).cloned()).unwrap_or_else(|| i.to_string());
            w.write_record([label, format!("{v:.12e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sums of consecutive blocks of 24 total indices.
pub fn first_stage_importance(total_indices: &[f64]) -> Result<Vec<f64>> {
    if total_indices.is_empty() || total_indices.len() % HOURS_PER_BLOCK != 0 {
        return Err(Error::DimensionMismatch {
            expected: HOURS_PER_BLOCK * total_indices.len().div_ceil(HOURS_PER_BLOCK).max(1),
            got: total_indices.len(),
        });
    }
    Ok(total_indices.chunks(HOURS_PER_BLOCK).map(|c| c.iter().sum()).collect())
}

/// Indices of the `count` largest scores in non-increasing order, ties going
/// to the lower index. Negative scores count as zero.
pub fn select_features(scores: &[f64], count: usize) -> Result<Vec<usize>> {
    if count > scores.len() {
        return Err(Error::Input(format!("cannot keep {count} of {} features", scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("scores contain NaN".into()));
    }
    let floored: Vec<f64> = scores.iter().map(|s| s.max(0.0)).collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| floored[b].partial_cmp(&floored[a]).expect("no NaN").then(a.cmp(&b)));
    idx.truncate(count);
    Ok(idx)
}
