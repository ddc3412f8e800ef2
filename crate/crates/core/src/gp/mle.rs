use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hyper::SeHyperParams;
use crate::error::{Error, Result};
use crate::linalg::cholesky_jittered;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Optimizer settings for marginal-likelihood fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Total number of starting points, the caller's initial guess included.
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once the projected gradient's largest entry falls below this.
    pub grad_tol: f64,
    /// Stop after three consecutive iterations improving the objective by
    /// less than this relative amount.
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            max_iter: 200,
            grad_tol: 1e-5,
            rel_tol: 1e-9,
        }
    }
}

/// Result of a maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub hyper: SeHyperParams,
    /// Input-noise variances estimated jointly with the kernel (empty for a
    /// plain fit).
    pub input_noise: Vec<f64>,
    pub log_likelihood: f64,
    /// Log marginal likelihood at the caller's initial guess (after clamping
    /// into the search box).
    pub initial_log_likelihood: f64,
    /// Log marginal likelihood after each accepted iterate of the winning
    /// start.
    pub trace: Vec<f64>,
    /// Whether any estimated input-noise variance ended on its upper cap.
    pub input_noise_capped: bool,
    /// Objective evaluations summed over all starts.
    pub evaluations: usize,
}

/// Per-point correction `Σ_k basis[i, k] · s_k` whose scales `s_k` are fitted
/// along with the kernel.
pub(crate) struct NoiseBasis<'a> {
    pub basis: &'a DMatrix<f64>,
    pub init: &'a [f64],
}

struct Objective {
    dists: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    fixed: Option<Vec<f64>>,
    basis: Option<DMatrix<f64>>,
}

impl Objective {
    fn n(&self) -> usize {
        self.y.len()
    }

    /// Negative log marginal likelihood and its gradient in log space.
    fn eval(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let n = self.n();
        let d = self.dists.len();
        let sf2 = theta[0].exp();
        let lam: Vec<f64> = theta[1..=d].iter().map(|v| v.exp()).collect();
        let sy2 = theta[d + 1].exp();
        let scales: Vec<f64> = theta[d + 2..].iter().map(|v| v.exp()).collect();

        let mut c = DMatrix::zeros(n, n);
        for (dk, l) in self.dists.iter().zip(&lam) {
            c.zip_apply(dk, |acc: &mut f64, v: f64| *acc += v / l);
        }
        c.apply(|v| *v = sf2 * (-0.5 * *v).exp());
        let mut k = c.clone();
        for i in 0..n {
            let mut e = sy2;
            if let Some(f) = &self.fixed {
                e += f[i];
            }
            if let Some(b) = &self.basis {
                e += (0..scales.len()).map(|j| b[(i, j)] * scales[j]).sum::<f64>();
            }
            k[(i, i)] += e;
        }
        let factor = cholesky_jittered(k).ok()?;
        let alpha = factor.solve(&self.y);
        let nlml = 0.5 * self.y.dot(&alpha) + 0.5 * factor.log_det() + 0.5 * n as f64 * LN_2PI;
        if !nlml.is_finite() {
            return None;
        }

        // W = ααᵀ − K⁻¹; dLML/dθ = ½ tr(W ∂K/∂θ).
        let mut w = factor.inverse();
        w.apply(|v| *v = -*v);
        w.ger(1.0, &alpha, &alpha, 1.0);
        let mut grad = vec![0.0; theta.len()];
        grad[0] = 0.5 * w.dot(&c);
        for (k_dim, (dk, l)) in self.dists.iter().zip(&lam).enumerate() {
            let mut s = 0.0;
            for ((wv, cv), dv) in w.iter().zip(c.iter()).zip(dk.iter()) {
                s += wv * cv * dv;
            }
            grad[1 + k_dim] = 0.5 * s / (2.0 * l);
        }
        let w_diag: Vec<f64> = (0..n).map(|i| w[(i, i)]).collect();
        grad[d + 1] = 0.5 * sy2 * w_diag.iter().sum::<f64>();
        if let Some(b) = &self.basis {
            for (j, s) in scales.iter().enumerate() {
                grad[d + 2 + j] = 0.5 * s * (0..n).map(|i| w_diag[i] * b[(i, j)]).sum::<f64>();
            }
        }
        // Minimizing the negative.
        grad.iter_mut().for_each(|g| *g = -*g);
        Some((nlml, grad))
    }
}

fn squared_distances(x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let n = x.nrows();
    (0..x.ncols())
        .map(|k| DMatrix::from_fn(n, n, |i, j| (x[(i, k)] - x[(j, k)]).powi(2)))
        .collect()
}

struct Run {
    theta: Vec<f64>,
    f: f64,
    trace: Vec<f64>,
    evaluations: usize,
}

/// Box-constrained BFGS. Iterates are projected onto `[lo, hi]`, so the
/// objective never increases between accepted iterates.
fn minimize(obj: &Objective, x0: Vec<f64>, lo: &[f64], hi: &[f64], opts: &FitOptions) -> Option<Run> {
    let m = x0.len();
    let project = |x: &mut [f64]| {
        for i in 0..m {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    };
    let mut x = x0;
    project(&mut x);
    let (mut f, mut g) = obj.eval(&x)?;
    let mut evaluations = 1;
    let mut trace = vec![-f];
    let mut h = DMatrix::<f64>::identity(m, m);
    let mut small_steps = 0;
    let mut fresh = true;
    let at_bound = |x: &[f64], g: &[f64], i: usize| {
        (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)
    };

    for _ in 0..opts.max_iter {
        let pg: Vec<f64> = (0..m).map(|i| if at_bound(&x, &g, i) { 0.0 } else { g[i] }).collect();
        if pg.iter().fold(0.0f64, |a, v| a.max(v.abs())) < opts.grad_tol {
            break;
        }
        let gv = DVector::from_column_slice(&pg);
        let mut p: Vec<f64> = (-(&h * &gv)).iter().cloned().collect();
        for i in 0..m {
            if at_bound(&x, &g, i) {
                p[i] = 0.0;
            }
        }
        let slope: f64 = p.iter().zip(&pg).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            h = DMatrix::identity(m, m);
            fresh = true;
            p = pg.iter().map(|v| -v).collect();
        }
        // Keep a single step within a factor of e^5 per parameter.
        let max_step = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut t = if max_step > 5.0 { 5.0 / max_step } else { 1.0 };

        let mut accepted = None;
        for _ in 0..20 {
            let mut xn: Vec<f64> = (0..m).map(|i| x[i] + t * p[i]).collect();
            project(&mut xn);
            let decrease: f64 = (0..m).map(|i| g[i] * (xn[i] - x[i])).sum();
            evaluations += 1;
            if let Some((fn_, gn)) = obj.eval(&xn) {
                if fn_ <= f + 1e-4 * decrease && fn_ <= f {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if !fresh {
                h = DMatrix::identity(m, m);
                fresh = true;
                continue;
            }
            break;
        };

        // Curvature pairs only see coordinates free at both ends of the step;
        // gradients of pinned coordinates would distort the update.
        let free = |i: usize| !at_bound(&x, &g, i) && !at_bound(&xn, &gn, i);
        let s = DVector::from_iterator(m, (0..m).map(|i| if free(i) { xn[i] - x[i] } else { 0.0 }));
        let yv = DVector::from_iterator(m, (0..m).map(|i| if free(i) { gn[i] - g[i] } else { 0.0 }));
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            if fresh {
                // Rescale the identity to the observed curvature before the
                // first update.
                h *= sy / yv.norm_squared();
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ, expanded.
            h += (s.clone() * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let improvement = f - fn_;
        x = xn;
        f = fn_;
        g = gn;
        trace.push(-f);
        if improvement < opts.rel_tol * (1.0 + f.abs()) {
            small_steps += 1;
            if small_steps >= 3 {
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    Some(Run {
        theta: x,
        f,
        trace,
        evaluations,
    })
}

/// Log marginal likelihood of `y` (centered on its mean) under `hyper`, with
/// an optional correction added to the noise diagonal.
pub fn log_marginal_likelihood(
    x: &DMatrix<f64>,
    y: &[f64],
    hyper: &SeHyperParams,
    correction: Option<&[f64]>,
) -> Result<f64> {
    hyper.validate()?;
    let n = x.nrows();
    let mean = y.iter().sum::<f64>() / n as f64;
    let obj = Objective {
        dists: squared_distances(x),
        y: DVector::from_iterator(n, y.iter().map(|v| v - mean)),
        fixed: correction.map(|c| c.to_vec()),
        basis: None,
    };
    let mut theta = hyper.to_log();
    if hyper.noise_var == 0.0 {
        theta[hyper.dim() + 1] = f64::NEG_INFINITY;
    }
    obj.eval(&theta)
        .map(|(f, _)| -f)
        .ok_or_else(|| Error::IllConditioned("covariance not factorizable".into()))
}

/// Maximum-likelihood SE hyperparameters with default options.
pub fn fit_mle(
    x: &DMatrix<f64>,
    y: &[f64],
    init: &SeHyperParams,
    correction: Option<&[f64]>,
) -> Result<SeHyperParams> {
    Ok(fit_mle_with(x, y, init, correction, &FitOptions::default())?.hyper)
}

/// Maximum-likelihood fit in log-parameter space.
///
/// Outputs are standardized internally. Starting points are the caller's
/// `init` followed by length scales of `{0.1, 1, 10}` times each input's
/// standard deviation (and a low-noise variant), truncated to
/// `opts.restarts`. Search box, in standardized output units: signal variance
/// `[1e-6, 1e4]`, squared length scales `[1e-4, 1e4]` times the input
/// variance, noise variance `[1e-6, 10]`.
pub fn fit_mle_with(
    x: &DMatrix<f64>,
    y: &[f64],
    init: &SeHyperParams,
    correction: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<MleFit> {
    fit_impl(x, y, init, correction, None, opts)
}

/// Smallest standardized output-noise variance the fit may reach. Below it
/// the covariance of near-noiseless data is too ill-conditioned for the
/// likelihood to be evaluated reliably.
pub const NOISE_FLOOR: f64 = 1e-6;

pub(crate) fn fit_impl(
    x: &DMatrix<f64>,
    y: &[f64],
    init: &SeHyperParams,
    correction: Option<&[f64]>,
    noise: Option<NoiseBasis<'_>>,
    opts: &FitOptions,
) -> Result<MleFit> {
    init.validate()?;
    let n = x.nrows();
    let d = x.ncols();
    if n < 2 || y.len() != n {
        return Err(Error::Input(format!("need at least 2 matching rows, got {n} and {}", y.len())));
    }
    if d != init.dim() {
        return Err(Error::DimensionMismatch { expected: init.dim(), got: d });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Input("training data contain non-finite values".into()));
    }
    if let Some(c) = correction {
        if c.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: c.len() });
        }
    }

    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale2 = if var > 1e-24 { var } else { 1.0 };
    let scale = scale2.sqrt();
    let in_var: Vec<f64> = (0..d)
        .map(|k| {
            let col = x.column(k);
            let m = col.mean();
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n as f64;
            if v > 1e-12 { v } else { 1.0 }
        })
        .collect();

    let n_noise = noise.as_ref().map_or(0, |b| b.basis.ncols());
    let obj = Objective {
        dists: squared_distances(x),
        y: DVector::from_iterator(n, y.iter().map(|v| (v - mean) / scale)),
        fixed: correction.map(|c| c.iter().map(|v| v / scale2).collect()),
        basis: noise.as_ref().map(|b| b.basis / scale2),
    };

    let mut lo = vec![1e-6f64.ln()];
    let mut hi = vec![1e4f64.ln()];
    for v in &in_var {
        lo.push((1e-4 * v).ln());
        hi.push((1e4 * v).ln());
    }
    lo.push(NOISE_FLOOR.ln());
    hi.push(10f64.ln());
    let noise_var: Vec<f64> = match &noise {
        Some(b) => {
            if b.basis.nrows() != n || b.init.len() != n_noise {
                return Err(Error::DimensionMismatch { expected: n, got: b.basis.nrows() });
            }
            (0..n_noise).map(|k| if k < d { in_var[k] } else { 1.0 }).collect()
        }
        None => Vec::new(),
    };
    for v in &noise_var {
        lo.push((1e-8 * v).ln());
        hi.push((10.0 * v).ln());
    }

    let standardized = |h: &SeHyperParams, extra: &[f64]| -> Vec<f64> {
        let mut t = vec![(h.signal_var / scale2).ln()];
        t.extend(h.sq_length_scales.iter().map(|l| l.ln()));
        t.push((h.noise_var / scale2).max(1e-300).ln());
        t.extend(extra.iter().map(|s| s.max(1e-300).ln()));
        t
    };
    let init_noise: Vec<f64> = noise.as_ref().map_or(Vec::new(), |b| b.init.to_vec());
    let mut starts = vec![standardized(init, &init_noise)];
    let grid: [(f64, f64); 4] = [(0.1, 0.1), (1.0, 0.1), (10.0, 0.1), (1.0, 0.01)];
    for (mult, nv) in grid {
        let h = SeHyperParams {
            signal_var: scale2,
            sq_length_scales: in_var.iter().map(|v| mult * mult * v).collect(),
            noise_var: nv * scale2,
        };
        let extra: Vec<f64> = noise_var.iter().map(|v| 0.01 * v).collect();
        starts.push(standardized(&h, &extra));
    }
    starts.truncate(opts.restarts.max(1));
    for s in starts.iter_mut() {
        for i in 0..s.len() {
            s[i] = s[i].clamp(lo[i], hi[i]);
        }
    }

    let initial = obj.eval(&starts[0]).map(|(f, _)| f);
    let runs: Vec<Option<Run>> = starts
        .into_par_iter()
        .map(|s| minimize(&obj, s, &lo, &hi, opts))
        .collect();
    let evaluations = runs.iter().flatten().map(|r| r.evaluations).sum::<usize>() + 1;
    let best = runs
        .into_iter()
        .flatten()
        .fold(None::<Run>, |acc, r| match acc {
            Some(a) if a.f <= r.f => Some(a),
            _ => Some(r),
        })
        .ok_or_else(|| Error::Fitting {
            message: "covariance could not be factorized at any starting point".into(),
            best_log_params: None,
        })?;

    let ln_scale = scale2.ln();
    let offset = -(n as f64) * scale.ln();
    let theta = &best.theta;
    let hyper = SeHyperParams {
        signal_var: (theta[0] + ln_scale).exp(),
        sq_length_scales: theta[1..=d].iter().map(|v| v.exp()).collect(),
        noise_var: (theta[d + 1] + ln_scale).exp(),
    };
    let input_noise: Vec<f64> = theta[d + 2..].iter().map(|v| v.exp()).collect();
    let capped = (0..n_noise).any(|k| theta[d + 2 + k] >= hi[d + 2 + k] - 1e-9);
    Ok(MleFit {
        hyper,
        input_noise,
        log_likelihood: -best.f + offset,
        initial_log_likelihood: initial.map_or(f64::NEG_INFINITY, |f| -f + offset),
        trace: best.trace.iter().map(|v| v + offset).collect(),
        input_noise_capped: capped,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradient_matches_differences() {
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 0.1, 0.5, -0.3, 1.0, 0.8, 1.5, 0.2, -0.7, 0.4, 0.3, 1.1]);
        let y = [0.2, -0.1, 0.7, 1.0, -0.5, 0.3];
        let basis = DMatrix::from_fn(6, 2, |i, j| 0.1 + 0.05 * (i + j) as f64);
        let obj = Objective {
            dists: squared_distances(&x),
            y: DVector::from_column_slice(&y),
            fixed: Some(vec![0.01; 6]),
            basis: Some(basis),
        };
        let theta = vec![0.2, -0.3, 0.4, -2.0, -1.5, -2.5];
        let (_, g) = obj.eval(&theta).unwrap();
        for i in 0..theta.len() {
            let h = 1e-6;
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (obj.eval(&a).unwrap().0 - obj.eval(&b).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn trace_is_monotone_and_beats_init() {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64 / 8.0);
        let y: Vec<f64> = (0..40).map(|i| (i as f64 / 8.0).sin() + 0.05 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let init = SeHyperParams::new(0.1, vec![100.0], 1.0).unwrap();
        let fit = fit_mle_with(&x, &y, &init, None, &FitOptions::default()).unwrap();
        assert!(fit.log_likelihood >= fit.initial_log_likelihood);
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        let direct = log_marginal_likelihood(&x, &y, &fit.hyper, None).unwrap();
        assert!((direct - fit.log_likelihood).abs() < 1e-6 * direct.abs().max(1.0));
    }

    #[test]
    fn zero_correction_is_identical() {
        let x = DMatrix::from_fn(25, 2, |i, j| ((i * (j + 3)) % 7) as f64 / 3.0);
        let y: Vec<f64> = (0..25).map(|i| (i as f64 * 0.4).cos()).collect();
        let init = SeHyperParams::new(1.0, vec![1.0, 1.0], 0.1).unwrap();
        let a = fit_mle(&x, &y, &init, None).unwrap();
        let b = fit_mle(&x, &y, &init, Some(&[0.0; 25])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_output_pushes_signal_to_floor() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let y = vec![2.0; 20];
        let init = SeHyperParams::new(1e-6, vec![1.0], 1e-8).unwrap();
        let fit = fit_mle_with(&x, &y, &init, None, &FitOptions::default()).unwrap();
        assert!(fit.hyper.signal_var <= 1e-5);
    }
}
