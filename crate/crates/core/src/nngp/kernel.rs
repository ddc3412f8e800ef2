use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::config::NngpConfig;
use super::table::{NonlinearityTable, VarianceSlice};
use crate::error::{Error, Result};

/// `σ_b² + σ_w² (x·x′) / d_in`.
pub fn base_kernel(x: &[f64], x_prime: &[f64], config: &NngpConfig) -> Result<f64> {
    for v in [x, x_prime] {
        if v.len() != config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: config.input_dim,
                got: v.len(),
            });
        }
    }
    let dot: f64 = x.iter().zip(x_prime).map(|(a, b)| a * b).sum();
    Ok(config.bias_var + config.weight_var * dot / config.input_dim as f64)
}

/// Closed-form `E[ReLU(u) ReLU(v)]` for variance `k` and correlation `c`.
pub fn arccos_relu(k: f64, c: f64) -> f64 {
    if k <= 0.0 {
        return 0.0;
    }
    let alpha = c.clamp(-1.0, 1.0).acos();
    k / (2.0 * PI) * (alpha.sin() + (PI - alpha) * alpha.cos())
}

/// Correlation `k_xy / k_xx`, clamped to `[-1, 1]` when it overshoots by at
/// most `1e-9` relative.
fn correlation(k_xy: f64, k_xx: f64) -> Result<f64> {
    if k_xx <= 0.0 {
        return Ok(0.0);
    }
    let c = k_xy / k_xx;
    if !c.is_finite() || c.abs() > 1.0 + 1e-9 {
        return Err(Error::NumericalConsistency(format!(
            "kernel correlation {c} outside [-1, 1]"
        )));
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// Evaluates `F_φ` either through a lookup table or, for ReLU, in closed
/// form.
#[derive(Debug, Clone)]
pub struct NngpKernel {
    config: NngpConfig,
    table: Option<Arc<NonlinearityTable>>,
}

enum Layer<'a> {
    Table(VarianceSlice<'a>),
    Analytic(f64),
}

impl Layer<'_> {
    #[inline]
    fn eval(&self, c: f64) -> f64 {
        match self {
            Layer::Table(slice) => slice.at(c),
            Layer::Analytic(k) => arccos_relu(*k, c),
        }
    }
}

impl NngpKernel {
    /// `table` may be `None` only when the configuration selects the
    /// closed-form ReLU path.
    pub fn new(config: NngpConfig, table: Option<Arc<NonlinearityTable>>) -> Result<Self> {
        config.validate()?;
        match &table {
            None if !config.uses_closed_form() => {
                return Err(Error::Config(
                    "a lookup table is required unless analytic ReLU is selected".into(),
                ))
            }
            Some(t) if t.nonlinearity() != config.nonlinearity && !config.uses_closed_form() => {
                return Err(Error::Config(format!(
                    "table built for {} but configuration uses {}",
                    t.nonlinearity().name(),
                    config.nonlinearity.name()
                )))
            }
            _ => {}
        }
        Ok(NngpKernel { config, table })
    }

    pub fn config(&self) -> &NngpConfig {
        &self.config
    }

    pub fn table(&self) -> Option<&Arc<NonlinearityTable>> {
        self.table.as_ref()
    }

    fn layer(&self, k_xx: f64) -> Result<Layer<'_>> {
        if self.config.uses_closed_form() {
            if !(k_xx >= 0.0 && k_xx.is_finite()) {
                return Err(Error::NumericalConsistency(format!("kernel variance {k_xx}")));
            }
            return Ok(Layer::Analytic(k_xx));
        }
        let table = self.table.as_ref().expect("table checked in constructor");
        Ok(Layer::Table(table.slice_at(k_xx)?))
    }

    /// One layer of the recursion: `σ_b² + σ_w² F_φ(k_xx, k_xy / k_xx)`.
    pub fn layer_step(&self, k_xy: f64, k_xx: f64, k_yy: f64) -> Result<f64> {
        if (k_xx - k_yy).abs() > 1e-9 * k_xx.abs().max(1.0) {
            return Err(Error::Input(format!(
                "layer step needs equal variances, got {k_xx} and {k_yy}"
            )));
        }
        let c = correlation(k_xy, k_xx)?;
        Ok(self.config.bias_var + self.config.weight_var * self.layer(k_xx)?.eval(c))
    }

    /// Diagonal of `K^l` for `l = 0..=depth` given constant-norm inputs.
    pub fn diagonal_sequence(&self) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let mut k = cfg.bias_var + cfg.weight_var;
        let mut out = vec![k];
        for _ in 0..cfg.depth {
            k = self.layer_step(k, k, k)?;
            out.push(k);
        }
        Ok(out)
    }

    /// Final-layer prior variance `K^L(x, x)` for constant-norm inputs.
    pub fn prior_variance(&self) -> Result<f64> {
        Ok(*self.diagonal_sequence()?.last().expect("non-empty"))
    }

    /// Applies the recursion to base-kernel values computed from dot
    /// products, in place.
    fn propagate(&self, values: &mut [f64]) -> Result<()> {
        let diag = self.diagonal_sequence()?;
        let cfg = &self.config;
        for &k_prev in diag.iter().take(cfg.depth) {
            let layer = self.layer(k_prev)?;
            let bad = values
                .par_iter_mut()
                .map(|v| match correlation(*v, k_prev) {
                    Ok(c) => {
                        *v = cfg.bias_var + cfg.weight_var * layer.eval(c);
                        0usize
                    }
                    Err(_) => 1,
                })
                .sum::<usize>();
            if bad > 0 {
                return Err(Error::NumericalConsistency(format!(
                    "{bad} kernel correlations outside [-1, 1]; inputs are not constant-norm"
                )));
            }
        }
        Ok(())
    }

    /// `K^L` between rows of `a` and rows of `b`, both already scaled to
    /// squared norm `d_in`.
    pub fn cross_matrix(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let d = self.config.input_dim;
        if a.ncols() != d || b.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if a.ncols() != d { a.ncols() } else { b.ncols() },
            });
        }
        let scale = self.config.weight_var / d as f64;
        let mut k = a * b.transpose();
        k.iter_mut().for_each(|v| *v = self.config.bias_var + scale * *v);
        self.propagate(k.as_mut_slice())?;
        Ok(k)
    }

    /// `K^L` over the rows of `inputs`, after scaling every row to squared
    /// norm `d_in`. Returns the matrix and the per-row scale factors applied.
    pub fn kernel_matrix(&self, inputs: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let (scaled, factors) = scale_to_constant_norm(inputs)?;
        let mut k = self.cross_matrix(&scaled, &scaled)?;
        // Symmetrize against rounding in the matrix product.
        let n = k.nrows();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (k[(i, j)] + k[(j, i)]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok((k, factors))
    }
}

/// Scales each row to squared norm equal to the column count. Rows that are
/// entirely zero cannot be scaled and are rejected.
pub fn scale_to_constant_norm(inputs: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("kernel inputs contain non-finite values".into()));
    }
    let d = inputs.ncols() as f64;
    let mut out = inputs.clone();
    let mut factors = Vec::with_capacity(inputs.nrows());
    for (r, mut row) in out.row_iter_mut().enumerate() {
        let norm2 = row.norm_squared();
        if norm2 <= 0.0 {
            return Err(Error::Input(format!("input row {r} is zero and cannot be normalized")));
        }
        let f = (d / norm2).sqrt();
        row.scale_mut(f);
        factors.push(f);
    }
    Ok((out, factors))
}
