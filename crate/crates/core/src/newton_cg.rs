//! Preconditioned Newton-CG for barrier subproblems `min φ_μ(x) = F(x) + μB(x)`.
//!
//! Each iteration works in the preconditioned coordinates `x = x_t + M_t d`
//! with `M_t M_tᵀ = ∇²B(x_t)⁻¹` (identity on free variables). While the
//! gradient is large in the dual local norm, capped CG supplies either a
//! damped Newton direction or a negative-curvature direction; once it is
//! small, the minimum-eigenvalue oracle either certifies approximate
//! second-order stationarity or returns a curvature direction. Every step is
//! capped at length β in the local norm, so trial points stay inside the
//! Dikin ellipsoid.

use nalgebra::DVector;
use thiserror::Error;

use crate::barrier::{BarrierDomain, BarrierError, InteriorPoint, PreconditionerFactor};
use crate::capped_cg::{capped_cg, CappedCgConfig, CappedCgError, DirectionKind};
use crate::eig_oracle::{min_eig_oracle, OracleConfig, OracleError, OracleKind, OracleMode};

/// A linear operator `v ↦ H v`, typically a Hessian frozen at a point.
pub type HessianOperator<'a> = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + 'a>;

/// A twice-differentiable function with Hessian-vector products.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// The Hessian at `x` as an operator. Implementations may precompute
    /// per-point data here; the operator is reused for every matvec of one
    /// Newton-CG iteration.
    fn hessian_at<'a>(&'a self, x: &DVector<f64>) -> HessianOperator<'a>;
}

#[derive(Debug, Error)]
pub enum NewtonCgError {
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error("capped CG failed: {0}")]
    CappedCg(#[from] CappedCgError),
    #[error("eigenvalue oracle failed: {0}")]
    Oracle(#[from] OracleError),
    #[error("line search stalled after {backtracks} backtracks at iteration {iteration}")]
    LineSearchStalled { iteration: usize, backtracks: usize },
    #[error("iteration budget of {0} exhausted")]
    IterationBudgetExceeded(usize),
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
    #[error("negative-curvature direction has zero curvature and zero slope")]
    DegenerateDirection,
    #[error("invalid Newton-CG configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonCgConfig {
    pub eps_g: f64,
    pub eps_h: f64,
    /// Backtracking ratio θ.
    pub theta: f64,
    /// Capped CG accuracy ζ.
    pub zeta: f64,
    /// Maximum step length β in the local norm.
    pub beta: f64,
    /// Line-search parameter η.
    pub eta: f64,
    /// Oracle failure probability δ (randomized mode).
    pub delta: f64,
    pub oracle: OracleMode,
    pub max_iters: usize,
    pub max_backtracks: usize,
    pub max_cg_matvecs: usize,
}

impl NewtonCgConfig {
    /// Tolerances with the remaining parameters at `(θ, ζ, η, β) = (0.5, 0.5, 0.01, 0.9)`.
    pub fn new(eps_g: f64, eps_h: f64) -> Self {
        Self {
            eps_g,
            eps_h,
            theta: 0.5,
            zeta: 0.5,
            beta: 0.9,
            eta: 0.01,
            delta: 0.05,
            oracle: OracleMode::Randomized { seed: 0 },
            max_iters: 10_000,
            max_backtracks: 60,
            max_cg_matvecs: 100_000,
        }
    }

    pub fn validate(&self) -> Result<(), NewtonCgError> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.eps_g) || !open_unit(self.eps_h) {
            return Err(NewtonCgError::InvalidConfig("tolerances must lie in (0, 1)"));
        }
        if !open_unit(self.theta) || !open_unit(self.zeta) || !open_unit(self.eta) {
            return Err(NewtonCgError::InvalidConfig("θ, ζ and η must lie in (0, 1)"));
        }
        if !(self.beta >= self.eps_h && self.beta < 1.0) {
            return Err(NewtonCgError::InvalidConfig("β must lie in [ε_H, 1)"));
        }
        if !open_unit(self.delta) {
            return Err(NewtonCgError::InvalidConfig("δ must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// `φ_μ = F + μB` over a barrier domain.
pub struct SubproblemObjective<'a, F: ?Sized> {
    pub smooth: &'a F,
    pub domain: &'a BarrierDomain,
    pub mu: f64,
}

impl<'a, F: SmoothObjective + ?Sized> SubproblemObjective<'a, F> {
    pub fn new(smooth: &'a F, domain: &'a BarrierDomain, mu: f64) -> Self {
        assert!(mu > 0.0, "barrier weight must be positive");
        assert_eq!(smooth.dim(), domain.dim());
        Self { smooth, domain, mu }
    }

    /// `φ_μ(x)`, or `+∞` outside the interior.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self.domain.value(x) {
            Ok(b) => {
                let v = self.smooth.value(x) + self.mu * b;
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    v
                }
            }
            Err(_) => f64::INFINITY,
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, BarrierError> {
        Ok(self.smooth.gradient(x) + self.mu * self.domain.gradient(x)?)
    }

    pub fn hessian_at(&self, x: &DVector<f64>) -> Result<HessianOperator<'_>, BarrierError> {
        self.domain.check_interior(x)?;
        let smooth = self.smooth.hessian_at(x);
        let x = x.clone();
        let domain = self.domain;
        let mu = self.mu;
        Ok(Box::new(move |v: &DVector<f64>| {
            let barrier = domain
                .hessian_apply(&x, v)
                .expect("point checked interior");
            smooth(v) + mu * barrier
        }))
    }

    /// The preconditioned Hessian `Mᵀ ∇²φ_μ(x) M` as an operator.
    pub fn preconditioned_hessian<'s>(
        &'s self,
        x: &DVector<f64>,
        factor: &'s PreconditionerFactor,
    ) -> Result<HessianOperator<'s>, BarrierError> {
        let hess = self.hessian_at(x)?;
        Ok(Box::new(move |v: &DVector<f64>| {
            factor.apply_transpose(&hess(&factor.apply(v)))
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Damped Newton direction from capped CG.
    CgSolution,
    /// Negative curvature found by capped CG.
    CgCurvature,
    /// Negative curvature returned by the eigenvalue oracle.
    OracleCurvature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `φ_μ` at the accepted point.
    pub phi: f64,
    /// `‖∇φ_μ‖*` at the point the step was taken from.
    pub grad_dual_norm: f64,
    pub step: StepKind,
    pub alpha: f64,
    pub step_norm: f64,
    pub matvecs: usize,
}

#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub x: InteriorPoint,
    pub phi: f64,
    pub grad_dual_norm: f64,
    /// The oracle certified `λ_min(Mᵀ∇²φ_μ M) ≥ -ε_H` (probabilistically in
    /// randomized mode).
    pub second_order_certified: bool,
    /// Smallest eigenvalue estimate reported by the terminating oracle call.
    pub min_curvature: f64,
    pub iterations: usize,
    pub matvecs: usize,
    pub factorizations: usize,
    pub oracle_calls: usize,
    pub trace: Vec<IterationRecord>,
}

/// `sgn(s)`, with `sgn(0) = 1`.
fn sgn(s: f64) -> f64 {
    if s >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Outcome of a backtracking line search.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub x_next: DVector<f64>,
    pub phi_next: f64,
    pub backtracks: usize,
}

fn backtrack<F: SmoothObjective + ?Sized>(
    obj: &SubproblemObjective<'_, F>,
    x: &DVector<f64>,
    phi_x: f64,
    md: &DVector<f64>,
    decrease: impl Fn(f64) -> f64,
    cfg: &NewtonCgConfig,
) -> Option<LineSearchOutcome> {
    let mut alpha = 1.0;
    for j in 0..=cfg.max_backtracks {
        let trial = x + alpha * md;
        let phi = obj.value(&trial);
        if phi < phi_x - decrease(alpha) {
            return Some(LineSearchOutcome {
                alpha,
                x_next: trial,
                phi_next: phi,
                backtracks: j,
            });
        }
        alpha *= cfg.theta;
    }
    None
}

/// Backtracking for a damped Newton direction: the smallest `j` with
/// `φ(x + θʲMd) < φ(x) - η ε_H θ²ʲ ‖d‖²`.
pub fn line_search_sol<F: SmoothObjective + ?Sized>(
    obj: &SubproblemObjective<'_, F>,
    x: &DVector<f64>,
    factor: &PreconditionerFactor,
    d: &DVector<f64>,
    cfg: &NewtonCgConfig,
) -> Option<LineSearchOutcome> {
    let dd = d.norm_squared();
    let coef = cfg.eta * cfg.eps_h * dd;
    backtrack(obj, x, obj.value(x), &factor.apply(d), |a| coef * a * a, cfg)
}

/// Backtracking for a negative-curvature direction: the smallest `j` with
/// `φ(x + θʲMd) < φ(x) - η θ²ʲ ‖d‖³/2`.
pub fn line_search_nc<F: SmoothObjective + ?Sized>(
    obj: &SubproblemObjective<'_, F>,
    x: &DVector<f64>,
    factor: &PreconditionerFactor,
    d: &DVector<f64>,
    cfg: &NewtonCgConfig,
) -> Option<LineSearchOutcome> {
    let coef = cfg.eta * d.norm().powi(3) / 2.0;
    backtrack(obj, x, obj.value(x), &factor.apply(d), |a| coef * a * a, cfg)
}

/// Scales a capped-CG curvature direction:
/// `d = -sgn(d̂ᵀg) min{|d̂ᵀHd̂|/‖d̂‖³, β/‖d̂‖} d̂`.
pub fn scale_cg_curvature(d_hat: &DVector<f64>, slope: f64, curvature: f64, beta: f64) -> DVector<f64> {
    let norm = d_hat.norm();
    let factor = (curvature.abs() / norm.powi(3)).min(beta / norm);
    -sgn(slope) * factor * d_hat
}

/// Scales a capped-CG solution: `d = min{1, β/‖d̂‖} d̂`.
pub fn scale_cg_solution(d_hat: &DVector<f64>, beta: f64) -> DVector<f64> {
    let norm = d_hat.norm();
    (1.0f64).min(beta / norm) * d_hat
}

/// Scales a unit oracle direction: `d = -sgn(vᵀg) min{|vᵀHv|, β} v`.
pub fn scale_oracle_curvature(v: &DVector<f64>, slope: f64, curvature: f64, beta: f64) -> DVector<f64> {
    -sgn(slope) * curvature.abs().min(beta) * v
}

pub fn solve_subproblem<F: SmoothObjective + ?Sized>(
    obj: &SubproblemObjective<'_, F>,
    u0: &InteriorPoint,
    cfg: &NewtonCgConfig,
) -> Result<SubproblemResult, NewtonCgError> {
    solve_subproblem_observed(obj, u0, cfg, &mut |_, _| {})
}

/// Like [`solve_subproblem`], calling `observer` after every accepted step
/// with the step record and the new iterate.
pub fn solve_subproblem_observed<F: SmoothObjective + ?Sized>(
    obj: &SubproblemObjective<'_, F>,
    u0: &InteriorPoint,
    cfg: &NewtonCgConfig,
    observer: &mut dyn FnMut(&IterationRecord, &DVector<f64>),
) -> Result<SubproblemResult, NewtonCgError> {
    cfg.validate()?;
    let n = obj.domain.dim();
    let mut x = u0.as_vector().clone();
    let mut phi = obj.value(&x);
    if !phi.is_finite() {
        return Err(NewtonCgError::NonFiniteStart);
    }
    let mut trace = Vec::new();
    let mut matvecs = 0usize;
    let mut oracle_calls = 0usize;

    for t in 0..cfg.max_iters {
        let factor = obj.domain.preconditioner(&x)?;
        let g = factor.apply_transpose(&obj.gradient(&x)?);
        let grad_dual_norm = g.norm();
        let h = obj.preconditioned_hessian(&x, &factor)?;

        let (d, kind) = if grad_dual_norm > cfg.eps_g {
            let cg_cfg = CappedCgConfig {
                epsilon: cfg.eps_h,
                zeta: cfg.zeta,
                u_bound: 0.0,
                max_matvecs: cfg.max_cg_matvecs,
            };
            let out = capped_cg(|v| h(v), &g, &cg_cfg)?;
            matvecs += out.matvec_count;
            match out.kind {
                DirectionKind::Sol => (
                    scale_cg_solution(&out.direction, cfg.beta),
                    StepKind::CgSolution,
                ),
                DirectionKind::Nc => {
                    let curvature = out.direction.dot(&h(&out.direction));
                    matvecs += 1;
                    let slope = out.direction.dot(&g);
                    (
                        scale_cg_curvature(&out.direction, slope, curvature, cfg.beta),
                        StepKind::CgCurvature,
                    )
                }
            }
        } else {
            let oracle_cfg = OracleConfig {
                epsilon: cfg.eps_h,
                delta: cfg.delta,
                mode: match cfg.oracle {
                    OracleMode::Randomized { seed } => OracleMode::Randomized {
                        seed: seed.wrapping_add(t as u64),
                    },
                    OracleMode::Deterministic => OracleMode::Deterministic,
                },
                h_norm_estimate: None,
            };
            let out = min_eig_oracle(|v| h(v), n, &oracle_cfg)?;
            oracle_calls += 1;
            matvecs += out.matvecs;
            match out.kind {
                OracleKind::Certified => {
                    return Ok(SubproblemResult {
                        x: InteriorPoint::new(obj.domain, x)?,
                        phi,
                        grad_dual_norm,
                        second_order_certified: true,
                        min_curvature: out.min_ritz,
                        iterations: t,
                        matvecs,
                        factorizations: t + 1,
                        oracle_calls,
                        trace,
                    });
                }
                OracleKind::NegativeCurvature => {
                    let v = out.direction.expect("oracle returns a direction");
                    let curvature = out.rayleigh.expect("oracle returns its Rayleigh quotient");
                    (
                        scale_oracle_curvature(&v, v.dot(&g), curvature, cfg.beta),
                        StepKind::OracleCurvature,
                    )
                }
            }
        };
        if d.norm() == 0.0 {
            return Err(NewtonCgError::DegenerateDirection);
        }

        let search = match kind {
            StepKind::CgSolution => line_search_sol(obj, &x, &factor, &d, cfg),
            _ => line_search_nc(obj, &x, &factor, &d, cfg),
        };
        let step = search.ok_or(NewtonCgError::LineSearchStalled {
            iteration: t,
            backtracks: cfg.max_backtracks,
        })?;
        x = step.x_next;
        phi = step.phi_next;
        let record = IterationRecord {
            iteration: t,
            phi,
            grad_dual_norm,
            step: kind,
            alpha: step.alpha,
            step_norm: d.norm(),
            matvecs,
        };
        observer(&record, &x);
        trace.push(record);
    }
    Err(NewtonCgError::IterationBudgetExceeded(cfg.max_iters))
}
