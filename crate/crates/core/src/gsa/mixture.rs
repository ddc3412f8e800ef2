use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::decompose::FunctionalDecomposition;
use crate::error::{Error, Result};

const MAX_EM_ITER: usize = 500;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Full-covariance Gaussian mixture over decomposition coefficients.
#[derive(Debug, Clone)]
pub struct CoefficientSampler {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    chol: Vec<Cholesky<f64, Dyn>>,
    log_likelihood_trace: Vec<f64>,
    dim: usize,
}

impl CoefficientSampler {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Mean log-likelihood after initialization and after every EM step.
    pub fn log_likelihood_trace(&self) -> &[f64] {
        &self.log_likelihood_trace
    }

    /// Mixture mean `Σ_k w_k μ_k`.
    pub fn mixture_mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m += mu * *w;
        }
        m
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        if self.dim == 0 {
            return DVector::zeros(0);
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let z = DVector::from_iterator(self.dim, (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.means[k] + self.chol[k].l_dirty().lower_triangle() * z
    }
}

/// Raises eigenvalues below `floor` to `floor`; leaves well-conditioned
/// matrices untouched.
fn floor_covariance(cov: &mut DMatrix<f64>, floor: f64) {
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.iter().all(|v| *v >= floor) {
        return;
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    *cov = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
}

fn log_density(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let diff = x - mean;
    let mut z = diff.clone();
    chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut z);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (z.norm_squared() + log_det + x.len() as f64 * LN_2PI)
}

fn factor(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(cov.clone())
        .ok_or_else(|| Error::IllConditioned("mixture covariance is not positive definite".into()))
}

/// EM fit of a `k`-component Gaussian mixture to the decomposition
/// coefficients, seeded by k-means++ with a ChaCha RNG.
///
/// Component covariances are floored at `1e-8` times the average coefficient
/// variance, applied only when an eigenvalue drops below it.
pub fn fit_sampler(decomposition: &FunctionalDecomposition, k: usize, seed: u64) -> Result<CoefficientSampler> {
    let data = decomposition.coefficients();
    fit_mixture(data, k, seed)
}

pub(crate) fn fit_mixture(data: &DMatrix<f64>, k: usize, seed: u64) -> Result<CoefficientSampler> {
    let n = data.nrows();
    let p = data.ncols();
    if k == 0 {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    if p == 0 {
        return Ok(CoefficientSampler {
            weights: vec![1.0],
            means: vec![DVector::zeros(0)],
            covariances: vec![DMatrix::zeros(0, 0)],
            chol: vec![Cholesky::new(DMatrix::<f64>::identity(0, 0)).expect("empty")],
            log_likelihood_trace: vec![0.0],
            dim: 0,
        });
    }
    if n < 5 * k * p {
        return Err(Error::Input(format!(
            "{n} samples are too few for a {k}-component mixture in {p} dimensions (need {})",
            5 * k * p
        )));
    }
    let points: Vec<DVector<f64>> = data.row_iter().map(|r| r.transpose()).collect();
    let global_mean = points.iter().fold(DVector::zeros(p), |a, x| a + x) / n as f64;
    let mut global_cov = DMatrix::zeros(p, p);
    for x in &points {
        let d = x - &global_mean;
        global_cov += &d * d.transpose();
    }
    global_cov /= n as f64;
    let avg_var = global_cov.trace() / p as f64;
    let floor = if avg_var > 0.0 { 1e-8 * avg_var } else { 1e-12 };

    // k-means++ seeding.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|x| centers.iter().map(|c| (x - c).norm_squared()).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|v| {
                    acc += v;
                    acc > u
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
    }

    let mut weights = vec![1.0 / k as f64; k];
    let mut means = centers;
    let mut init_cov = global_cov.clone();
    floor_covariance(&mut init_cov, floor);
    let mut covs = vec![init_cov; k];
    let mut chols: Vec<Cholesky<f64, Dyn>> = covs.iter().map(factor).collect::<Result<_>>()?;
    let mut trace = Vec::new();
    let mut resp = DMatrix::zeros(n, k);

    for _ in 0..=MAX_EM_ITER {
        // E step with log-sum-exp.
        let mut ll = 0.0;
        for (i, x) in points.iter().enumerate() {
            let logs: Vec<f64> = (0..k)
                .map(|j| weights[j].ln() + log_density(x, &means[j], &chols[j]))
                .collect();
            let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = logs.iter().map(|l| (l - m).exp()).sum();
            ll += m + s.ln();
            for j in 0..k {
                resp[(i, j)] = (logs[j] - m).exp() / s;
            }
        }
        ll /= n as f64;
        let converged = trace
            .last()
            .is_some_and(|prev: &f64| (ll - prev).abs() <= 1e-10 * ll.abs().max(1.0));
        trace.push(ll);
        if converged {
            break;
        }
        // M step.
        for j in 0..k {
            let nk: f64 = resp.column(j).sum();
            if nk <= 1e-12 {
                continue;
            }
            weights[j] = nk / n as f64;
            let mut mu = DVector::zeros(p);
            for (i, x) in points.iter().enumerate() {
                mu += x * resp[(i, j)];
            }
            mu /= nk;
            let mut cov = DMatrix::zeros(p, p);
            for (i, x) in points.iter().enumerate() {
                let d = x - &mu;
                cov += (&d * d.transpose()) * resp[(i, j)];
            }
            cov /= nk;
            floor_covariance(&mut cov, floor);
            means[j] = mu;
            chols[j] = factor(&cov)?;
            covs[j] = cov;
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
    }

    Ok(CoefficientSampler {
        weights,
        means,
        covariances: covs,
        chol: chols,
        log_likelihood_trace: trace,
        dim: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_clusters(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, 2, |r, _| {
            let z: f64 = rng.sample(StandardNormal);
            if r % 10 < 3 { 10.0 + 0.5 * z } else { -5.0 + 0.5 * z }
        })
    }

    #[test]
    fn single_component_matches_sample_moments() {
        let data = two_clusters(200, 1);
        let g = fit_mixture(&data, 1, 7).unwrap();
        let n = data.nrows() as f64;
        for c in 0..2 {
            let m = data.column(c).sum() / n;
            assert!((g.means()[0][c] - m).abs() < 1e-8);
        }
        let mean = &g.means()[0];
        let mut cov = DMatrix::zeros(2, 2);
        for r in data.row_iter() {
            let d = r.transpose() - mean;
            cov += &d * d.transpose();
        }
        cov /= n;
        assert!((&g.covariances()[0] - cov).abs().max() < 1e-8);
    }

    #[test]
    fn recovers_separated_weights_and_is_monotone() {
        let data = two_clusters(1000, 2);
        let g = fit_mixture(&data, 2, 3).unwrap();
        let mut w = g.weights().to_vec();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((w[0] - 0.3).abs() < 0.05 && (w[1] - 0.7).abs() < 0.05);
        for pair in g.log_likelihood_trace().windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let data = two_clusters(300, 4);
        let a = fit_mixture(&data, 2, 11).unwrap();
        let b = fit_mixture(&data, 2, 11).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.means(), b.means());
    }

    #[test]
    fn too_few_samples_rejected() {
        let data = two_clusters(15, 5);
        assert!(fit_mixture(&data, 2, 1).is_err());
    }
}
