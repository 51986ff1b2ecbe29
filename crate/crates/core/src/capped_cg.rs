//! Capped conjugate gradient for the damped system `(H + 2εI) d = -g`.
//!
//! Runs standard CG on `H̄ = H + 2εI` while monitoring curvature along the
//! iterates, residuals and search directions. It stops either with an
//! approximate solution (`Sol`) or with a direction `d` along which
//! `dᵀ H̄ d < ε‖d‖²`, i.e. `dᵀ H d < -ε‖d‖²` (`Nc`). The operator-norm bound
//! `U` starts at the caller's value and grows whenever a matvec reveals a
//! larger Rayleigh-type ratio; the derived quantities κ, ζ̂, τ and T follow it.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CappedCgError {
    #[error("right-hand side g is zero")]
    ZeroGradient,
    #[error("matvec budget of {budget} exhausted (best relative residual {best_residual:e})")]
    MatvecBudgetExceeded { budget: usize, best_residual: f64 },
    #[error("slow-decrease test fired but no iterate pair certified negative curvature")]
    MissingCurvaturePair,
    #[error("invalid capped CG configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CappedCgConfig {
    /// Damping parameter ε ∈ (0, 1).
    pub epsilon: f64,
    /// Relative accuracy ζ ∈ (0, 1).
    pub zeta: f64,
    /// Initial bound on ‖H‖ (0 when unknown).
    pub u_bound: f64,
    pub max_matvecs: usize,
}

impl CappedCgConfig {
    pub fn new(epsilon: f64, zeta: f64) -> Self {
        Self {
            epsilon,
            zeta,
            u_bound: 0.0,
            max_matvecs: 100_000,
        }
    }

    fn validate(&self) -> Result<(), CappedCgError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CappedCgError::InvalidConfig("epsilon must lie in (0, 1)"));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(CappedCgError::InvalidConfig("zeta must lie in (0, 1)"));
        }
        if !(self.u_bound >= 0.0) {
            return Err(CappedCgError::InvalidConfig("u_bound must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DirectionKind {
    /// Approximate solution of the damped system.
    Sol,
    /// Negative-curvature direction.
    Nc,
}

/// The adaptive quantities derived from the current bound `U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgBounds {
    pub u: f64,
    pub kappa: f64,
    pub zeta_hat: f64,
    pub tau: f64,
    pub t: f64,
}

impl CgBounds {
    fn new(u: f64, epsilon: f64, zeta: f64) -> Self {
        let kappa = (u + 2.0 * epsilon) / epsilon;
        let zeta_hat = zeta / (3.0 * kappa);
        let sk = kappa.sqrt();
        let tau = sk / (sk + 1.0);
        let t = 4.0 * kappa.powi(4) / (1.0 - tau.sqrt()).powi(2);
        debug_assert!(zeta_hat < 1.0 / 6.0);
        Self {
            u,
            kappa,
            zeta_hat,
            tau,
            t,
        }
    }

    /// Raises `U` to `ratio` if larger; returns whether it changed.
    fn raise(&mut self, ratio: f64, epsilon: f64, zeta: f64) -> bool {
        if ratio > self.u {
            *self = Self::new(ratio, epsilon, zeta);
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovOutcome {
    pub direction: DVector<f64>,
    pub kind: DirectionKind,
    pub matvec_count: usize,
    pub iterations: usize,
    pub bounds: CgBounds,
}

struct Counter<F> {
    apply: F,
    count: usize,
    budget: usize,
}

impl<F: FnMut(&DVector<f64>) -> DVector<f64>> Counter<F> {
    fn call(&mut self, v: &DVector<f64>, best: f64) -> Result<DVector<f64>, CappedCgError> {
        if self.count >= self.budget {
            return Err(CappedCgError::MatvecBudgetExceeded {
                budget: self.budget,
                best_residual: best,
            });
        }
        self.count += 1;
        Ok((self.apply)(v))
    }
}

/// `vᵀ H̄ v < ε‖v‖²` given `Hv`.
fn weak_curvature(v: &DVector<f64>, hv: &DVector<f64>, epsilon: f64) -> bool {
    let vv = v.norm_squared();
    v.dot(hv) + 2.0 * epsilon * vv < epsilon * vv
}

/// Ratio `‖Hv‖/‖v‖`, or 0 for a zero vector.
fn norm_ratio(v: &DVector<f64>, hv: &DVector<f64>) -> f64 {
    let nv = v.norm();
    if nv > 0.0 {
        hv.norm() / nv
    } else {
        0.0
    }
}

/// Runs capped CG on `(H + 2εI) d = -g` where `apply_h(v) = H v`.
///
/// One matvec is spent per iteration (on the new search direction); `H y`
/// and `H r` are carried by recurrences.
pub fn capped_cg<F>(
    apply_h: F,
    g: &DVector<f64>,
    cfg: &CappedCgConfig,
) -> Result<KrylovOutcome, CappedCgError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    cfg.validate()?;
    let eps = cfg.epsilon;
    let zeta = cfg.zeta;
    let g_norm = g.norm();
    if g_norm == 0.0 {
        return Err(CappedCgError::ZeroGradient);
    }
    let mut h = Counter {
        apply: apply_h,
        count: 0,
        budget: cfg.max_matvecs,
    };
    let mut bounds = CgBounds::new(cfg.u_bound, eps, zeta);
    let finish = |direction, kind, h: &Counter<F>, iterations, bounds| {
        Ok(KrylovOutcome {
            direction,
            kind,
            matvec_count: h.count,
            iterations,
            bounds,
        })
    };

    let n = g.len();
    let mut y = DVector::zeros(n);
    let mut hy = DVector::zeros(n);
    let mut r = g.clone();
    let mut p = -g;
    let mut hp = h.call(&p, 1.0)?;
    let r0_norm = g_norm;

    if weak_curvature(&p, &hp, eps) {
        return finish(p, DirectionKind::Nc, &h, 0, bounds);
    }
    bounds.raise(norm_ratio(&p, &hp), eps, zeta);

    // Iterates y^0, y^1, ... and their images, for the slow-decrease search.
    let mut ys = vec![y.clone()];
    let mut hys = vec![hy.clone()];
    let mut best = 1.0;
    let mut j = 0usize;
    loop {
        let hbar_p = &hp + 2.0 * eps * &p;
        let rr = r.norm_squared();
        let alpha = rr / p.dot(&hbar_p);
        y.axpy(alpha, &p, 1.0);
        hy.axpy(alpha, &hp, 1.0);
        r.axpy(alpha, &hbar_p, 1.0);
        let beta = r.norm_squared() / rr;
        let hp_prev = hp.clone();
        p = -&r + beta * &p;
        j += 1;
        let r_norm = r.norm();
        best = f64::min(best, r_norm / r0_norm);
        hp = h.call(&p, best)?;
        let hr = -&hp + beta * &hp_prev;
        ys.push(y.clone());
        hys.push(hy.clone());

        bounds.raise(norm_ratio(&p, &hp), eps, zeta);
        bounds.raise(norm_ratio(&y, &hy), eps, zeta);
        bounds.raise(norm_ratio(&r, &hr), eps, zeta);

        if weak_curvature(&y, &hy, eps) {
            return finish(y, DirectionKind::Nc, &h, j, bounds);
        } else if r_norm <= bounds.zeta_hat * r0_norm {
            return finish(y, DirectionKind::Sol, &h, j, bounds);
        } else if weak_curvature(&p, &hp, eps) {
            return finish(p, DirectionKind::Nc, &h, j, bounds);
        } else if r_norm > bounds.t.sqrt() * bounds.tau.powf(j as f64 / 2.0) * r0_norm {
            let hbar_p = &hp + 2.0 * eps * &p;
            let alpha = r.norm_squared() / p.dot(&hbar_p);
            let y_next = &y + alpha * &p;
            let hy_next = &hy + alpha * &hp;
            for i in 0..j {
                let d = &y_next - &ys[i];
                let hd = &hy_next - &hys[i];
                if weak_curvature(&d, &hd, eps) {
                    return finish(d, DirectionKind::Nc, &h, j, bounds);
                }
            }
            return Err(CappedCgError::MissingCurvaturePair);
        }
    }
}
