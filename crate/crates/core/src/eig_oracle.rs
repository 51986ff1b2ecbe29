//! Minimum-eigenvalue oracle.
//!
//! Either returns a unit direction `v` with `vᵀHv ≤ -ε/2`, or certifies
//! `λ_min(H) ≥ -ε`. The randomized mode runs Lanczos from a uniformly random
//! unit vector for at most [`iteration_cap`] steps, so its certificate holds
//! with probability at least `1 - δ`. The deterministic mode densifies the
//! operator and takes its exact smallest eigenpair.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Power iterations used to estimate ‖H‖ when no bound is supplied.
pub const NORM_ESTIMATE_ITERS: usize = 20;
/// Inflation applied to the power-method estimate.
pub const NORM_ESTIMATE_INFLATION: f64 = 1.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("operator returned a vector of length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid oracle configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Randomized { seed: u64 },
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub mode: OracleMode,
    /// Known bound on ‖H‖; estimated by the power method when absent.
    pub h_norm_estimate: Option<f64>,
}

impl OracleConfig {
    pub fn randomized(epsilon: f64, delta: f64, seed: u64) -> Self {
        Self {
            epsilon,
            delta,
            mode: OracleMode::Randomized { seed },
            h_norm_estimate: None,
        }
    }

    pub fn deterministic(epsilon: f64) -> Self {
        Self {
            epsilon,
            delta: 0.5,
            mode: OracleMode::Deterministic,
            h_norm_estimate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    NegativeCurvature,
    Certified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub kind: OracleKind,
    /// Unit direction with `vᵀHv ≤ -ε/2` (negative curvature only).
    pub direction: Option<DVector<f64>>,
    /// `vᵀHv` for the returned direction.
    pub rayleigh: Option<f64>,
    /// Smallest Ritz value seen (exact λ_min in deterministic mode).
    pub min_ritz: f64,
    pub iterations: usize,
    pub matvecs: usize,
    /// Lanczos breakdowns handled by restarting in the orthogonal complement.
    pub restarts: usize,
}

/// `N(ε, δ) = min{n, 1 + ⌈ln(2.75 n/δ²)/2 · √(‖H‖/ε)⌉}`.
pub fn iteration_cap(n: usize, epsilon: f64, delta: f64, h_norm: f64) -> usize {
    let n_f = n as f64;
    let raw = (2.75 * n_f / (delta * delta)).ln() / 2.0 * (h_norm / epsilon).sqrt();
    let steps = 1.0 + raw.ceil();
    if steps >= n_f {
        n
    } else {
        steps.max(1.0) as usize
    }
}

fn checked_apply<F>(apply_h: &mut F, v: &DVector<f64>) -> Result<DVector<f64>, OracleError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let out = apply_h(v);
    if out.len() != v.len() {
        return Err(OracleError::DimensionMismatch {
            expected: v.len(),
            got: out.len(),
        });
    }
    Ok(out)
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(n, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// Power-method estimate of ‖H‖, inflated by 10%.
pub fn estimate_norm<F>(apply_h: &mut F, n: usize, seed: u64) -> Result<f64, OracleError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut v = random_unit(n, &mut rng);
    let mut estimate = 0.0;
    for _ in 0..NORM_ESTIMATE_ITERS {
        let w = checked_apply(apply_h, &v)?;
        estimate = w.norm();
        if estimate == 0.0 {
            break;
        }
        v = w / estimate;
    }
    Ok(NORM_ESTIMATE_INFLATION * estimate)
}

pub fn min_eig_oracle<F>(
    mut apply_h: F,
    n: usize,
    cfg: &OracleConfig,
) -> Result<OracleOutcome, OracleError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    if n == 0 {
        return Err(OracleError::InvalidConfig("dimension must be positive"));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(OracleError::InvalidConfig("epsilon must be positive"));
    }
    match cfg.mode {
        OracleMode::Deterministic => dense_oracle(&mut apply_h, n, cfg.epsilon),
        OracleMode::Randomized { seed } => {
            if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
                return Err(OracleError::InvalidConfig("delta must lie in (0, 1)"));
            }
            lanczos_oracle(&mut apply_h, n, cfg, seed)
        }
    }
}

/// Densifies `H` with `n` matvecs (symmetrizing the result).
pub fn densify<F>(apply_h: &mut F, n: usize) -> Result<DMatrix<f64>, OracleError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut h = DMatrix::zeros(n, n);
    let mut e = DVector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        h.set_column(j, &checked_apply(apply_h, &e)?);
        e[j] = 0.0;
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Smallest eigenpair of a dense symmetric matrix.
pub fn smallest_eigenpair(h: DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(h);
    let (idx, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty spectrum");
    let v = eig.eigenvectors.column(idx).into_owned();
    let v = &v / v.norm();
    (lambda, v)
}

fn dense_oracle<F>(apply_h: &mut F, n: usize, epsilon: f64) -> Result<OracleOutcome, OracleError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let (lambda, v) = smallest_eigenpair(densify(apply_h, n)?);
    let negative = lambda <= -epsilon / 2.0;
    Ok(OracleOutcome {
        kind: if negative {
            OracleKind::NegativeCurvature
        } else {
            OracleKind::Certified
        },
        direction: negative.then_some(v),
        rayleigh: negative.then_some(lambda),
        min_ritz: lambda,
        iterations: n,
        matvecs: n,
        restarts: 0,
    })
}

/// Number of eigenvalues of the symmetric tridiagonal `(diag, off)` below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = diag[0] - x;
    if d < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let pivot = if d == 0.0 { f64::EPSILON * (1.0 + x.abs()) } else { d };
        d = diag[i] - x - off[i - 1] * off[i - 1] / pivot;
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// Smallest eigenvalue of a symmetric tridiagonal matrix by bisection.
pub fn tridiagonal_min_eigenvalue(diag: &[f64], off: &[f64]) -> f64 {
    assert!(!diag.is_empty() && off.len() + 1 >= diag.len());
    let k = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        let radius = if i > 0 { off[i - 1].abs() } else { 0.0 }
            + if i + 1 < k { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - radius);
        hi = hi.max(diag[i] + radius);
    }
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    lo -= 1e-12 * scale;
    hi += 1e-12 * scale;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 4.0 * f64::EPSILON * scale {
            break;
        }
        if sturm_count(diag, off, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn orthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    // Two passes of classical Gram-Schmidt.
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(w);
            w.axpy(-c, q, 1.0);
        }
    }
}

fn lanczos_oracle<F>(
    apply_h: &mut F,
    n: usize,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<OracleOutcome, OracleError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let eps = cfg.epsilon;
    let mut matvecs = 0;
    let h_norm = match cfg.h_norm_estimate {
        Some(bound) => bound,
        None => {
            matvecs += NORM_ESTIMATE_ITERS;
            estimate_norm(apply_h, n, seed)?
        }
    };
    let cap = iteration_cap(n, eps, cfg.delta, h_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<DVector<f64>> = vec![random_unit(n, &mut rng)];
    let mut diag: Vec<f64> = Vec::with_capacity(cap);
    let mut off: Vec<f64> = Vec::with_capacity(cap);
    let mut restarts = 0;
    let mut min_ritz = f64::INFINITY;

    for k in 0..cap {
        let q = &basis[k];
        let mut w = checked_apply(apply_h, q)?;
        matvecs += 1;
        let alpha = q.dot(&w);
        diag.push(alpha);
        orthogonalize(&mut w, &basis);

        let theta = tridiagonal_min_eigenvalue(&diag, &off);
        min_ritz = min_ritz.min(theta);
        if theta <= -eps / 2.0 {
            let dim = diag.len();
            let t = DMatrix::from_fn(dim, dim, |i, j| {
                if i == j {
                    diag[i]
                } else if i + 1 == j {
                    off[i]
                } else if j + 1 == i {
                    off[j]
                } else {
                    0.0
                }
            });
            let (_, s) = smallest_eigenpair(t);
            let mut v = DVector::zeros(n);
            for (coef, q) in s.iter().zip(&basis) {
                v.axpy(*coef, q, 1.0);
            }
            let v = &v / v.norm();
            let rayleigh = v.dot(&checked_apply(apply_h, &v)?);
            matvecs += 1;
            if rayleigh <= -eps / 2.0 {
                return Ok(OracleOutcome {
                    kind: OracleKind::NegativeCurvature,
                    direction: Some(v),
                    rayleigh: Some(rayleigh),
                    min_ritz,
                    iterations: k + 1,
                    matvecs,
                    restarts,
                });
            }
        }

        if k + 1 == cap {
            break;
        }
        let beta = w.norm();
        let breakdown_tol = 1e-12 * h_norm.max(alpha.abs()).max(f64::MIN_POSITIVE);
        if beta > breakdown_tol {
            off.push(beta);
            basis.push(w / beta);
        } else {
            // Invariant subspace found: continue in its orthogonal complement.
            let mut fresh = random_unit(n, &mut rng);
            orthogonalize(&mut fresh, &basis);
            let norm = fresh.norm();
            if norm <= 1e-10 {
                break;
            }
            restarts += 1;
            off.push(0.0);
            basis.push(fresh / norm);
        }
    }
    Ok(OracleOutcome {
        kind: OracleKind::Certified,
        direction: None,
        rayleigh: None,
        min_ritz,
        iterations: diag.len(),
        matvecs,
        restarts,
    })
}
