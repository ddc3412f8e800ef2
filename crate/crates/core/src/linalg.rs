//! Small dense linear-algebra and statistics helpers shared by the GP modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest relative jitter tried after a failed factorization.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// Cholesky factor of a symmetric matrix together with the diagonal jitter
/// that had to be added to obtain it.
#[derive(Debug, Clone)]
pub struct Factor {
    /// Lower-triangular factor, zero above the diagonal.
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

impl Factor {
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut out = self.solve_lower(rhs);
        self.l.tr_solve_lower_triangular_unchecked_mut(&mut out);
        out
    }

    /// `L⁻¹ b`, used for predictive variances.
    pub fn solve_lower(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut out = rhs.clone();
        self.l.solve_lower_triangular_unchecked_mut(&mut out);
        out
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `K⁻¹ = L⁻ᵀ L⁻¹`, formed with matrix products rather than `n`
    /// triangular solves.
    pub fn inverse(&self) -> DMatrix<f64> {
        let linv = lower_triangular_inverse(&self.l);
        linv.transpose() * &linv
    }
}

const BLOCK: usize = 64;

/// Right-looking blocked Cholesky: each diagonal block is factored directly,
/// the panel below it by a triangular solve and the trailing lower block
/// triangle updated with matrix products. `None` when a pivot is not
/// positive.
pub fn cholesky_lower(mut a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square matrix expected");
    let mut k = 0;
    while k < n {
        let b = BLOCK.min(n - k);
        for j in k..k + b {
            let mut d = a[(j, j)];
            for p in k..j {
                d -= a[(j, p)] * a[(j, p)];
            }
            if !(d > 0.0 && d.is_finite()) {
                return None;
            }
            let d = d.sqrt();
            a[(j, j)] = d;
            for i in j + 1..k + b {
                let mut s = a[(i, j)];
                for p in k..j {
                    s -= a[(i, p)] * a[(j, p)];
                }
                a[(i, j)] = s / d;
            }
        }
        let rest = n - k - b;
        if rest > 0 {
            let l11 = a.view((k, k), (b, b)).lower_triangle();
            // L₂₁ = A₂₁ L₁₁⁻ᵀ, solved as L₁₁ L₂₁ᵀ = A₂₁ᵀ.
            let mut t = a.view((k + b, k), (rest, b)).transpose();
            l11.solve_lower_triangular_unchecked_mut(&mut t);
            let l21 = t.transpose();
            a.view_mut((k + b, k), (rest, b)).copy_from(&l21);
            let mut j = 0;
            while j < rest {
                let w = BLOCK.min(rest - j);
                let lhs = l21.rows(j, rest - j);
                let rhs = l21.rows(j, w).transpose();
                a.view_mut((k + b + j, k + b + j), (rest - j, w))
                    .gemm(-1.0, &lhs, &rhs, 1.0);
                j += w;
            }
        }
        k += b;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Some(a)
}

/// Inverse of a non-singular lower-triangular matrix by recursive 2 × 2
/// blocking: `[[A, 0], [B, C]]⁻¹ = [[A⁻¹, 0], [−C⁻¹ B A⁻¹, C⁻¹]]`.
pub fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    if n <= 48 {
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            out[(j, j)] = 1.0 / l[(j, j)];
            for i in j + 1..n {
                let mut s = 0.0;
                for k in j..i {
                    s += l[(i, k)] * out[(k, j)];
                }
                out[(i, j)] = -s / l[(i, i)];
            }
        }
        return out;
    }
    let h = n / 2;
    let a_inv = lower_triangular_inverse(&l.view((0, 0), (h, h)).into_owned());
    let c_inv = lower_triangular_inverse(&l.view((h, h), (n - h, n - h)).into_owned());
    let b = l.view((h, 0), (n - h, h));
    let lower = -(&c_inv * (b * &a_inv));
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (h, h)).copy_from(&a_inv);
    out.view_mut((h, h), (n - h, n - h)).copy_from(&c_inv);
    out.view_mut((h, 0), (n - h, h)).copy_from(&lower);
    out
}

/// Factorizes `matrix`, adding progressively larger diagonal jitter
/// (`1e-10 → 1e-6` times the mean diagonal) when the plain factorization fails.
pub fn cholesky_jittered(matrix: DMatrix<f64>) -> Result<Factor> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned("matrix has non-finite entries".into()));
    }
    let n = matrix.nrows();
    if let Some(l) = cholesky_lower(matrix.clone()) {
        return Ok(Factor { l, jitter: 0.0 });
    }
    let mean_diag = matrix.diagonal().iter().sum::<f64>() / n.max(1) as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-12) {
        let jitter = rel * scale;
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(l) = cholesky_lower(m) {
            return Ok(Factor { l, jitter });
        }
        rel *= 10.0;
    }
    Err(Error::IllConditioned(format!(
        "Cholesky failed for {n}x{n} matrix even with jitter {:.1e} x mean diagonal",
        JITTER_MAX
    )))
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Per-column mean and (population) standard deviation of a row-major sample.
pub fn column_moments(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows().max(1) as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut stds = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let m = col.sum() / n;
        let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n;
        means.push(m);
        stds.push(v.sqrt());
    }
    (means, stds)
}

pub fn squared_distance_scaled(a: &[f64], b: &[f64], inv_scale: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_scale)
        .map(|((x, y), w)| (x - y) * (x - y) * w)
        .sum()
}
