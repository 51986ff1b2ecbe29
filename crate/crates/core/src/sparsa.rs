//! Nonmonotone projected gradient with Barzilai-Borwein steps (SpaRSA), and
//! the Euclidean projections it needs.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparsaError {
    #[error("step parameter {0:.3e} left [α_min, α_max]")]
    StepOutOfRange(f64),
    #[error("sphere projection of an entirely nonpositive matrix is undefined")]
    AllNegativeInput,
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsaConfig {
    /// Sufficient-decrease parameter σ.
    pub sigma: f64,
    /// Nonmonotone window: acceptance compares against the last `M + 1` values.
    pub window: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Growth factor of `α` while backtracking.
    pub eta: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SparsaConfig {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            window: 5,
            alpha_min: 1e-30,
            alpha_max: 1e30,
            eta: 2.0,
            tol: 1e-4,
            max_iters: 50_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsaRecord {
    pub iteration: usize,
    pub objective: f64,
    pub alpha: f64,
    /// `‖α(xᵗ - xᵗ⁻¹) + ∇f(xᵗ⁻¹) - ∇f(xᵗ)‖`.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SparsaResult {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub trace: Vec<SparsaRecord>,
}

pub fn sparsa_solve<F, G, P>(
    f: F,
    grad: G,
    project: P,
    x0: &DVector<f64>,
    cfg: &SparsaConfig,
) -> Result<SparsaResult, SparsaError>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&DVector<f64>) -> Result<DVector<f64>, SparsaError>,
{
    sparsa_solve_observed(f, grad, project, x0, cfg, &mut |_, _| {})
}

/// Like [`sparsa_solve`], calling `observer` with each accepted iterate.
pub fn sparsa_solve_observed<F, G, P>(
    f: F,
    grad: G,
    project: P,
    x0: &DVector<f64>,
    cfg: &SparsaConfig,
    observer: &mut dyn FnMut(&SparsaRecord, &DVector<f64>),
) -> Result<SparsaResult, SparsaError>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&DVector<f64>) -> Result<DVector<f64>, SparsaError>,
{
    let mut x = project(x0)?;
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(SparsaError::NonFiniteStart);
    }
    let mut g = grad(&x);
    let mut history = vec![fx];
    let mut alpha = 1.0;
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;

    for t in 1..=cfg.max_iters {
        let start = history.len().saturating_sub(cfg.window + 1);
        let reference = history[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (x_new, f_new) = loop {
            let candidate = project(&(&x - &g / alpha))?;
            let fc = f(&candidate);
            let step = (&candidate - &x).norm_squared();
            if fc <= reference - 0.5 * cfg.sigma * alpha * step {
                break (candidate, fc);
            }
            alpha *= cfg.eta;
            if alpha > cfg.alpha_max {
                return Err(SparsaError::StepOutOfRange(alpha));
            }
        };
        let g_new = grad(&x_new);
        let s = &x_new - &x;
        let y = &g_new - &g;
        residual = (alpha * &s - &y).norm();
        let record = SparsaRecord {
            iteration: t,
            objective: f_new,
            alpha,
            residual,
        };
        observer(&record, &x_new);
        trace.push(record);

        let ss = s.norm_squared();
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
        if residual <= cfg.tol {
            return Ok(SparsaResult {
                x,
                objective: fx,
                iterations: t,
                converged: true,
                residual,
                trace,
            });
        }
        let bb = if ss > 0.0 { y.dot(&s) / ss } else { cfg.alpha_min };
        alpha = if bb.is_finite() {
            bb.clamp(cfg.alpha_min, cfg.alpha_max)
        } else {
            cfg.alpha_min
        };
    }
    Ok(SparsaResult {
        x,
        objective: fx,
        iterations: cfg.max_iters,
        converged: false,
        residual,
        trace,
    })
}

/// Projection onto `{U : ‖U‖_F ≤ radius}`.
pub fn project_frobenius_ball(u: &DMatrix<f64>, radius: f64) -> DMatrix<f64> {
    let norm = u.norm();
    if norm <= radius {
        u.clone()
    } else {
        u * (radius / norm)
    }
}

/// Projection of `v` onto the unit simplex `{w ≥ 0, Σw = 1}` by sorting and
/// thresholding.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Column-wise projection onto the unit simplex.
pub fn project_column_simplex(v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = v.clone();
    for mut col in out.column_iter_mut() {
        let projected = project_simplex(col.as_slice());
        col.copy_from_slice(&projected);
    }
    out
}

/// Projection onto `{V ≥ 0, ‖V‖_F = radius}`: `radius · [V]₊ / ‖[V]₊‖_F`.
pub fn project_sphere_nonneg(v: &DMatrix<f64>, radius: f64) -> Result<DMatrix<f64>, SparsaError> {
    let plus = v.map(|e| e.max(0.0));
    let norm = plus.norm();
    if norm == 0.0 {
        return Err(SparsaError::AllNegativeInput);
    }
    Ok(plus * (radius / norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(project_simplex(&[0.2, 0.2]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(project_simplex(&[0.3, 0.7]), vec![0.3, 0.7]);
    }

    #[test]
    fn sphere_projection_normalizes() {
        let v = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let p = project_sphere_nonneg(&v, 1.0).unwrap();
        assert!((p - DMatrix::from_column_slice(2, 1, &[0.6, 0.8])).norm() < 1e-15);
        assert_eq!(
            project_sphere_nonneg(&(-v), 1.0),
            Err(SparsaError::AllNegativeInput)
        );
    }

    #[test]
    fn frobenius_ball_scales_radially() {
        let u = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(project_frobenius_ball(&u, 4.0), u);
        let p = project_frobenius_ball(&u, 1.0);
        assert!((p.norm() - 1.0).abs() < 1e-15);
        assert!((p - 0.5 * &u).norm() < 1e-15);
    }

    #[test]
    fn converges_on_unconstrained_quadratic() {
        let x0 = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        let out = sparsa_solve(
            |x| 0.5 * x.norm_squared(),
            |x| x.clone(),
            |x| Ok(x.clone()),
            &x0,
            &SparsaConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!(out.x.norm() < 1e-4);
        assert!(out.residual <= 1e-4);
    }

    #[test]
    fn constrained_minimizer_is_the_projection() {
        // min ½‖x - t‖² over the unit simplex is the projection of t.
        let t = DVector::from_vec(vec![0.9, 0.6, -0.2]);
        let expected = DVector::from_vec(project_simplex(t.as_slice()));
        let out = sparsa_solve(
            |x| 0.5 * (x - &t).norm_squared(),
            |x| x - &t,
            |x| Ok(DVector::from_vec(project_simplex(x.as_slice()))),
            &DVector::from_vec(vec![1.0, 0.0, 0.0]),
            &SparsaConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.x - expected).norm() < 1e-4);
    }

    #[test]
    fn nonmonotone_window_uses_last_m_plus_one_values() {
        // With a window of 0, acceptance is monotone: objective never increases.
        let cfg = SparsaConfig {
            window: 0,
            ..SparsaConfig::default()
        };
        let out = sparsa_solve(
            |x| (x[0] * x[0] - 1.0).powi(2) + 10.0 * x[1] * x[1],
            |x| DVector::from_vec(vec![4.0 * x[0] * (x[0] * x[0] - 1.0), 20.0 * x[1]]),
            |x| Ok(x.clone()),
            &DVector::from_vec(vec![0.3, 1.0]),
            &cfg,
        )
        .unwrap();
        assert!(out.trace.windows(2).all(|w| w[1].objective <= w[0].objective));
    }
}
