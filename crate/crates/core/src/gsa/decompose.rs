use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentTarget {
    Count(usize),
    /// Smallest count reaching the retained-variance fraction, capped.
    Variance { fraction: f64, max_components: usize },
}

impl Default for ComponentTarget {
    fn default() -> Self {
        ComponentTarget::Variance {
            fraction: 0.99,
            max_components: 10,
        }
    }
}

/// Principal-component representation `x ≈ mean + Σ_i β_i γ_i` of sampled
/// input vectors.
#[derive(Debug, Clone)]
pub struct FunctionalDecomposition {
    mean: DVector<f64>,
    /// `p × T`, orthonormal rows.
    basis: DMatrix<f64>,
    /// `n × p` sample coefficients.
    coefficients: DMatrix<f64>,
    /// Eigenvalues of all retained components, descending.
    explained: Vec<f64>,
    retained_variance: f64,
    /// Set when the requested count exceeded the sample rank.
    reduced_from: Option<usize>,
}

impl FunctionalDecomposition {
    pub fn n_components(&self) -> usize {
        self.basis.nrows()
    }

    pub fn grid_len(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained
    }

    pub fn retained_variance(&self) -> f64 {
        self.retained_variance
    }

    /// Requested component count when it had to be reduced to the sample
    /// rank.
    pub fn reduced_from(&self) -> Option<usize> {
        self.reduced_from
    }

    /// `mean + βᵀ basis` for one coefficient vector.
    pub fn reconstruct(&self, beta: &[f64]) -> DVector<f64> {
        let mut x = self.mean.clone();
        for (i, b) in beta.iter().enumerate() {
            x += self.basis.row(i).transpose() * *b;
        }
        x
    }

    /// Coefficients of `x` in the retained basis.
    pub fn project_coefficients(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.basis * (x - &self.mean)
    }

    /// Orthogonal projection onto the affine principal subspace.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let beta = self.project_coefficients(x);
        self.reconstruct(beta.as_slice())
    }
}

/// Principal components of the rows of `samples` (`n × T`).
///
/// Components are ordered by explained variance, descending; each basis
/// vector's largest-magnitude entry is made positive. A set of identical
/// samples yields a mean-only decomposition with no components.
pub fn decompose(samples: &DMatrix<f64>, target: ComponentTarget) -> Result<FunctionalDecomposition> {
    let n = samples.nrows();
    let t = samples.ncols();
    if n < 2 || t == 0 {
        return Err(Error::Input(format!("need at least 2 samples over a non-empty grid, got {n} x {t}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("samples contain non-finite values".into()));
    }
    let requested = match target {
        ComponentTarget::Count(p) => {
            if p == 0 {
                return Err(Error::Config("component count must be positive".into()));
            }
            if p > n {
                return Err(Error::Input(format!("{p} components requested from {n} samples")));
            }
            Some(p)
        }
        ComponentTarget::Variance {
            fraction,
            max_components,
        } => {
            if !(fraction > 0.0 && fraction <= 1.0) || max_components == 0 {
                return Err(Error::Config("variance target must be in (0, 1] with a positive cap".into()));
            }
            None
        }
    };

    let mean = DVector::from_iterator(t, samples.column_iter().map(|c| c.mean()));
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let rank = if total > 0.0 {
        values.iter().filter(|v| **v > 1e-12 * values[0]).count()
    } else {
        0
    };

    let (p, reduced_from) = match (requested, target) {
        (Some(p), _) if p > rank => {
            log::warn!("requested {p} components but the samples have rank {rank}; reducing");
            (rank, Some(p))
        }
        (Some(p), _) => (p, None),
        (
            None,
            ComponentTarget::Variance {
                fraction,
                max_components,
            },
        ) => {
            let mut acc = 0.0;
            let mut p = 0;
            while p < rank && p < max_components && acc < fraction * total * (1.0 - 1e-12) {
                acc += values[p];
                p += 1;
            }
            (p, None)
        }
        _ => unreachable!("count target handled above"),
    };

    let mut basis = DMatrix::zeros(p, t);
    for (r, &k) in order.iter().take(p).enumerate() {
        let v = eig.eigenvectors.column(k);
        let (imax, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) });
        let sign = if v[imax] < 0.0 { -1.0 } else { 1.0 };
        for c in 0..t {
            basis[(r, c)] = sign * v[c];
        }
    }
    let coefficients = &centered * basis.transpose();
    let retained_variance = if total > 0.0 {
        (values[..p].iter().sum::<f64>() / total).min(1.0)
    } else {
        1.0
    };
    Ok(FunctionalDecomposition {
        mean,
        basis,
        coefficients,
        explained: values[..p].to_vec(),
        retained_variance,
        reduced_from,
    })
}
