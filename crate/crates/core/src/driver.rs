//! The outer barrier augmented-Lagrangian loop.
//!
//! Iteration `k` approximately minimizes `L_{μ_k}(·, λ^k; ρ_k)` with
//! Newton-CG to tolerances `(μ_k, √μ_k)`, starting from the previous iterate
//! or, when that iterate is too poor, from the anchor `z_ε`. The raw
//! multiplier is updated classically and safeguarded by projection onto a
//! ball; the penalty grows by `r` whenever feasibility fails to improve by
//! the factor `α`.

use nalgebra::DVector;
use thiserror::Error;

use crate::barrier::{BarrierError, InteriorPoint};
use crate::eig_oracle::OracleMode;
use crate::model::{
    al_value, check_fosp, check_sosp, verify_derivatives, ALParameters, Certificate, ConicModel, ModelError,
    PenaltyObjective,
};
use crate::newton_cg::{
    solve_subproblem_observed, HessianOperator, IterationRecord, NewtonCgConfig, NewtonCgError, SmoothObjective,
    SubproblemObjective,
};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid driver configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("anchor residual ‖c(z)‖ = {residual:.3e} exceeds ε/2 = {bound:.3e}")]
    AnchorInfeasible { residual: f64, bound: f64 },
    #[error("subproblem {k} failed: {source}")]
    SubproblemFailed {
        k: usize,
        #[source]
        source: NewtonCgError,
    },
    #[error("subproblem {k} output violates its acceptance conditions: {detail}")]
    SubproblemContract { k: usize, detail: String },
    #[error("no termination within {max_outer} outer iterations (last ‖c‖ = {last_feasibility:.3e})")]
    OuterBudgetExceeded { max_outer: usize, last_feasibility: f64 },
}

/// Newton-CG parameters shared by every subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSettings {
    pub theta: f64,
    pub zeta: f64,
    pub eta: f64,
    pub beta: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
    pub max_cg_matvecs: usize,
}

impl Default for InnerSettings {
    fn default() -> Self {
        Self {
            theta: 0.5,
            zeta: 0.5,
            eta: 0.01,
            beta: 0.9,
            max_iters: 10_000,
            max_backtracks: 60,
            max_cg_matvecs: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverConfig {
    pub epsilon: f64,
    /// Multiplier safeguard radius Λ.
    pub lambda_max: f64,
    pub rho0: f64,
    pub alpha: f64,
    pub r: f64,
    pub delta: f64,
    pub oracle: OracleMode,
    /// Initial multiplier; zero when absent.
    pub lambda0: Option<DVector<f64>>,
    pub max_outer: usize,
    /// Run the finite-difference derivative probe at the anchor before solving.
    pub probe_derivatives: bool,
    /// Evaluate the projected second-order certificate at the output.
    pub certify_second_order: bool,
    pub inner: InnerSettings,
}

impl DriverConfig {
    /// `(Λ, ρ₀, α, r) = (10³, 10², 0.25, 1.5)` with a randomized oracle.
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            lambda_max: 1e3,
            rho0: 1e2,
            alpha: 0.25,
            r: 1.5,
            delta: 0.05,
            oracle: OracleMode::Randomized { seed: 0 },
            lambda0: None,
            max_outer: 200,
            probe_derivatives: true,
            certify_second_order: true,
            inner: InnerSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.epsilon) {
            return Err(DriverError::InvalidConfig("ε must lie in (0, 1)"));
        }
        if !(self.lambda_max > 0.0) || !(self.rho0 > 0.0) {
            return Err(DriverError::InvalidConfig("Λ and ρ₀ must be positive"));
        }
        if !open_unit(self.alpha) || !open_unit(self.delta) {
            return Err(DriverError::InvalidConfig("α and δ must lie in (0, 1)"));
        }
        if !(self.r > 1.0) {
            return Err(DriverError::InvalidConfig("r must exceed 1"));
        }
        if let Some(l0) = &self.lambda0 {
            if l0.norm() > self.lambda_max {
                return Err(DriverError::InvalidConfig("‖λ⁰‖ must not exceed Λ"));
            }
        }
        if self.max_outer == 0 {
            return Err(DriverError::InvalidConfig("max_outer must be positive"));
        }
        Ok(())
    }
}

/// `K_ε = ⌈ln 2 / ln r⌉`, the first index at which `μ_k` reaches its floor.
pub fn k_epsilon(r: f64) -> usize {
    assert!(r > 1.0, "growth factor must exceed 1");
    (std::f64::consts::LN_2 / r.ln()).ceil() as usize
}

/// `ε / (2√ϑ + 2)`.
pub fn mu_floor(epsilon: f64, theta: f64) -> f64 {
    epsilon / (2.0 * theta.sqrt() + 2.0)
}

/// `μ_k = max{ε, ω^k} / (2√ϑ + 2)` with `ω = r^{ln ε / ln 2}`; exactly the
/// floor from `K_ε` on.
pub fn mu_schedule(epsilon: f64, r: f64, theta: f64, k: usize) -> f64 {
    if k >= k_epsilon(r) {
        return mu_floor(epsilon, theta);
    }
    let omega_k = (k as f64 * r.ln() * epsilon.ln() / std::f64::consts::LN_2).exp();
    epsilon.max(omega_k) / (2.0 * theta.sqrt() + 2.0)
}

/// Euclidean projection onto the ball of radius `radius`.
pub fn project_ball(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= radius {
        v.clone()
    } else {
        v * (radius / norm)
    }
}

#[derive(Debug, Clone)]
pub struct ALState {
    pub k: usize,
    pub x: InteriorPoint,
    /// Safeguarded multiplier `λ^k`.
    pub lambda: DVector<f64>,
    /// Raw multiplier `λ̃^k`.
    pub lambda_tilde: DVector<f64>,
    pub rho: f64,
    /// `‖c̃(x^j)‖` for every completed outer iteration `j`.
    pub ctilde_history: Vec<f64>,
}

/// What one outer iteration did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterRecord {
    pub k: usize,
    pub mu: f64,
    pub rho: f64,
    /// `‖c(x^{k+1})‖`.
    pub feasibility: f64,
    /// `‖c̃(x^{k+1})‖`.
    pub shifted_feasibility: f64,
    /// `L_{μ_k}(x^{k+1}, λ^k; ρ_k)`.
    pub al_value: f64,
    pub inner_iterations: usize,
    pub matvecs: usize,
    /// The subproblem started from the anchor rather than the previous iterate.
    pub reset_to_anchor: bool,
}

/// Events reported to a [`solve_observed`] callback.
pub enum DriverEvent<'a> {
    Inner {
        k: usize,
        record: &'a IterationRecord,
        x: &'a DVector<f64>,
    },
    Outer(&'a OuterRecord),
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: InteriorPoint,
    pub lambda_tilde: DVector<f64>,
    pub lambda: DVector<f64>,
    pub rho: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub matvecs: usize,
    pub factorizations: usize,
    pub oracle_calls: usize,
    pub certificate: Certificate,
    pub trace: Vec<OuterRecord>,
}

/// The starting point for subproblem `k`: the anchor if
/// `L_{μ_k}(x^k, λ^k; ρ_k) > f(z_ε) + μ_k B(z_ε)`, the current iterate otherwise.
pub fn init_point<M: ConicModel + ?Sized>(
    model: &M,
    state: &ALState,
    params: &ALParameters,
    anchor: &InteriorPoint,
) -> Result<(InteriorPoint, bool), DriverError> {
    let current = al_value(model, params, state.x.as_vector())?;
    let reference = anchor_level(model, params.mu, anchor)?;
    if current > reference {
        Ok((anchor.clone(), true))
    } else {
        Ok((state.x.clone(), false))
    }
}

fn anchor_level<M: ConicModel + ?Sized>(model: &M, mu: f64, anchor: &InteriorPoint) -> Result<f64, DriverError> {
    let z = anchor.as_vector();
    Ok(model.objective(z) + mu * model.domain().value(z)?)
}

fn inner_config(cfg: &DriverConfig, mu: f64, k: usize) -> NewtonCgConfig {
    let inner = &cfg.inner;
    NewtonCgConfig {
        eps_g: mu,
        eps_h: mu.sqrt(),
        theta: inner.theta,
        zeta: inner.zeta,
        beta: inner.beta,
        eta: inner.eta,
        delta: cfg.delta,
        oracle: match cfg.oracle {
            OracleMode::Randomized { seed } => OracleMode::Randomized {
                seed: seed.wrapping_add((k as u64).wrapping_mul(1_000_003)),
            },
            OracleMode::Deterministic => OracleMode::Deterministic,
        },
        max_iters: inner.max_iters,
        max_backtracks: inner.max_backtracks,
        max_cg_matvecs: inner.max_cg_matvecs,
    }
}

/// Outcome of [`outer_step`]: the updated state and whether the termination
/// test passed at this iteration.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: ALState,
    pub record: OuterRecord,
    pub terminated: bool,
    pub factorizations: usize,
    pub oracle_calls: usize,
}

/// One outer iteration: subproblem solve, multiplier and penalty updates.
pub fn outer_step<M: ConicModel + ?Sized>(
    model: &M,
    state: &ALState,
    anchor: &InteriorPoint,
    cfg: &DriverConfig,
    observer: &mut dyn FnMut(DriverEvent<'_>),
) -> Result<StepOutcome, DriverError> {
    let k = state.k;
    let theta = model.domain().theta();
    let mu = mu_schedule(cfg.epsilon, cfg.r, theta, k);
    let params = ALParameters::anchored(model, state.lambda.clone(), state.rho, mu, anchor.as_vector());

    let (start, reset) = init_point(model, state, &params, anchor)?;
    let penalty = PenaltyObjective { model, params: &params };
    let sub = SubproblemObjective::new(&penalty, model.domain(), mu);
    let ncg = inner_config(cfg, mu, k);
    let result = solve_subproblem_observed(&sub, &start, &ncg, &mut |record, x| {
        observer(DriverEvent::Inner { k, record, x })
    })
    .map_err(|source| DriverError::SubproblemFailed { k, source })?;

    let x_next = result.x.as_vector();
    let level = anchor_level(model, mu, anchor)?;
    let al = al_value(model, &params, x_next)?;
    if al > level + 1e-12 * level.abs().max(1.0) {
        return Err(DriverError::SubproblemContract {
            k,
            detail: format!("AL value {al:.6e} above anchor level {level:.6e}"),
        });
    }
    if result.grad_dual_norm > mu {
        return Err(DriverError::SubproblemContract {
            k,
            detail: format!("gradient dual norm {:.3e} above μ = {mu:.3e}", result.grad_dual_norm),
        });
    }

    let ct = params.shifted_constraints(model, x_next);
    let ct_norm = ct.norm();
    let feasibility = model.constraints(x_next).norm();
    let lambda_tilde = &state.lambda + state.rho * &ct;
    let at_floor = k >= k_epsilon(cfg.r);
    let terminated = at_floor && feasibility <= cfg.epsilon;

    let record = OuterRecord {
        k,
        mu,
        rho: state.rho,
        feasibility,
        shifted_feasibility: ct_norm,
        al_value: al,
        inner_iterations: result.iterations,
        matvecs: result.matvecs,
        reset_to_anchor: reset,
    };
    observer(DriverEvent::Outer(&record));

    let grow = k == 0 || state.ctilde_history.last().is_some_and(|&prev| ct_norm > cfg.alpha * prev);
    let mut history = state.ctilde_history.clone();
    history.push(ct_norm);
    let next = ALState {
        k: k + 1,
        x: result.x,
        lambda: if terminated {
            state.lambda.clone()
        } else {
            project_ball(&lambda_tilde, cfg.lambda_max)
        },
        lambda_tilde,
        rho: if !terminated && grow { state.rho * cfg.r } else { state.rho },
        ctilde_history: history,
    };
    Ok(StepOutcome {
        state: next,
        record,
        terminated,
        factorizations: result.factorizations,
        oracle_calls: result.oracle_calls,
    })
}

pub fn solve<M: ConicModel + ?Sized>(
    model: &M,
    x0: &InteriorPoint,
    anchor: &InteriorPoint,
    cfg: &DriverConfig,
) -> Result<SolveReport, DriverError> {
    solve_observed(model, x0, anchor, cfg, &mut |_| {})
}

/// Like [`solve`], reporting every inner and outer iteration to `observer`.
pub fn solve_observed<M: ConicModel + ?Sized>(
    model: &M,
    x0: &InteriorPoint,
    anchor: &InteriorPoint,
    cfg: &DriverConfig,
    observer: &mut dyn FnMut(DriverEvent<'_>),
) -> Result<SolveReport, DriverError> {
    cfg.validate()?;
    let domain = model.domain();
    domain.check_interior(x0.as_vector())?;
    domain.check_interior(anchor.as_vector())?;
    let residual = model.constraints(anchor.as_vector()).norm();
    if residual > cfg.epsilon / 2.0 {
        return Err(DriverError::AnchorInfeasible {
            residual,
            bound: cfg.epsilon / 2.0,
        });
    }
    if cfg.probe_derivatives {
        verify_derivatives(model, anchor.as_vector(), 3, 0x5eed)?;
    }

    let m = model.num_constraints();
    let lambda0 = cfg.lambda0.clone().unwrap_or_else(|| DVector::zeros(m));
    if lambda0.len() != m {
        return Err(DriverError::InvalidConfig("λ⁰ length must equal the number of constraints"));
    }
    let mut state = ALState {
        k: 0,
        x: x0.clone(),
        lambda_tilde: lambda0.clone(),
        lambda: lambda0,
        rho: cfg.rho0,
        ctilde_history: Vec::new(),
    };
    let mut trace = Vec::new();
    let (mut inner, mut matvecs, mut factorizations, mut oracle_calls) = (0, 0, 0, 0);

    for _ in 0..cfg.max_outer {
        let step = outer_step(model, &state, anchor, cfg, observer)?;
        inner += step.record.inner_iterations;
        matvecs += step.record.matvecs;
        factorizations += step.factorizations;
        oracle_calls += step.oracle_calls;
        trace.push(step.record);
        state = step.state;
        if step.terminated {
            let x = state.x.as_vector();
            let certificate = if cfg.certify_second_order {
                check_sosp(model, x, &state.lambda_tilde, cfg.epsilon, cfg.epsilon.sqrt())?
            } else {
                check_fosp(model, x, &state.lambda_tilde, cfg.epsilon)?
            };
            return Ok(SolveReport {
                x: state.x,
                lambda_tilde: state.lambda_tilde,
                lambda: state.lambda,
                rho: state.rho,
                outer_iterations: trace.len(),
                inner_iterations: inner,
                matvecs,
                factorizations,
                oracle_calls,
                certificate,
                trace,
            });
        }
    }
    Err(DriverError::OuterBudgetExceeded {
        max_outer: cfg.max_outer,
        last_feasibility: trace.last().map_or(f64::NAN, |r| r.feasibility),
    })
}

/// `‖c(x)‖²`, minimized with a barrier to locate a nearly feasible anchor.
struct ResidualObjective<'a, M: ?Sized>(&'a M);

impl<'a, M: ConicModel + ?Sized> SmoothObjective for ResidualObjective<'a, M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.0.constraints(x).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        2.0 * self.0.jacobian_transpose_apply(x, &self.0.constraints(x))
    }

    fn hessian_at<'b>(&'b self, x: &DVector<f64>) -> HessianOperator<'b> {
        let model = self.0;
        let c = model.constraints(x);
        let jac = model.jacobian_dense(x);
        let x = x.clone();
        Box::new(move |v| 2.0 * (jac.tr_mul(&(&jac * v)) + model.constraint_hvp(&x, &c, v)))
    }
}

/// Searches for an interior `z` with `‖c(z)‖ ≤ ε/2` by applying Newton-CG to
/// `‖c(x)‖² + μB(x)` from `x0` with geometrically decreasing `μ`.
pub fn find_anchor<M: ConicModel + ?Sized>(
    model: &M,
    x0: &InteriorPoint,
    epsilon: f64,
    oracle: OracleMode,
) -> Result<InteriorPoint, DriverError> {
    let objective = ResidualObjective(model);
    let bound = epsilon / 2.0;
    let mut x = x0.clone();
    let mut mu: f64 = 0.1;
    let floor = (bound * bound / (2.0 * model.domain().theta().max(1.0))).max(1e-14);
    loop {
        let residual = model.constraints(x.as_vector()).norm();
        if residual <= bound {
            return Ok(x);
        }
        if mu < floor {
            return Err(DriverError::AnchorInfeasible { residual, bound });
        }
        let sub = SubproblemObjective::new(&objective, model.domain(), mu);
        let mut cfg = NewtonCgConfig::new(mu.min(0.5), mu.sqrt().min(0.5));
        cfg.oracle = oracle;
        x = crate::newton_cg::solve_subproblem(&sub, &x, &cfg)
            .map_err(|source| DriverError::SubproblemFailed { k: 0, source })?
            .x;
        mu *= 0.1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{BarrierDomain, VarLayout};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn first_barrier_weight_is_a_quarter_for_unit_theta() {
        for eps in [0.5, 1e-2, 1e-4, 1e-8] {
            assert_eq!(mu_schedule(eps, 1.5, 1.0, 0), 0.25);
        }
    }

    #[test]
    fn k_epsilon_for_r_one_and_a_half() {
        assert_eq!(k_epsilon(1.5), 2);
        assert_eq!(k_epsilon(2.0), 1);
        assert_eq!(k_epsilon(1.1), 8);
    }

    #[test]
    fn schedule_reaches_floor_at_k_epsilon() {
        let omega: f64 = 1.5f64.powf((1e-4f64).ln() / 2f64.ln());
        assert!(omega > 1e-4 && omega * omega < 1e-4);
        assert!((mu_schedule(1e-4, 1.5, 1.0, 1) - omega / 4.0).abs() < 1e-18);
        assert_eq!(mu_schedule(1e-4, 1.5, 1.0, 2), 2.5e-5);
        assert_eq!(mu_schedule(1e-4, 1.5, 1.0, 7), 2.5e-5);
    }

    #[test]
    fn ball_projection_is_radial() {
        assert_eq!(project_ball(&v(&[1500.0, 0.0]), 1000.0), v(&[1000.0, 0.0]));
        assert_eq!(project_ball(&v(&[3.0, 4.0]), 5.0), v(&[3.0, 4.0]));
    }

    /// `f(x) = ½‖x - t‖²` over the orthant with `c(x) = aᵀx - b`.
    struct Affine {
        domain: BarrierDomain,
        target: DVector<f64>,
        a: DVector<f64>,
        b: f64,
    }

    impl ConicModel for Affine {
        fn domain(&self) -> &BarrierDomain {
            &self.domain
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn objective(&self, x: &DVector<f64>) -> f64 {
            0.5 * (x - &self.target).norm_squared()
        }
        fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            x - &self.target
        }
        fn objective_hvp(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
            v.clone()
        }
        fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
            v(&[self.a.dot(x) - self.b])
        }
        fn jacobian_apply(&self, _x: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
            v(&[self.a.dot(d)])
        }
        fn jacobian_transpose_apply(&self, _x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
            w[0] * &self.a
        }
        fn constraint_hvp(&self, _x: &DVector<f64>, _w: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(d.len())
        }
    }

    fn affine() -> Affine {
        Affine {
            domain: BarrierDomain::orthant(VarLayout::conic_only(2)),
            target: v(&[2.0, 0.5]),
            a: v(&[1.0, 1.0]),
            b: 1.0,
        }
    }

    #[test]
    fn strictly_convex_toy_reaches_certified_solution() {
        // Projection of (2, 0.5) onto {x ≥ 0, x₁ + x₂ = 1} is (1, 0).
        let model = affine();
        let z = InteriorPoint::new(&model.domain, v(&[0.5, 0.5])).unwrap();
        let mut cfg = DriverConfig::new(1e-4);
        cfg.oracle = OracleMode::Deterministic;
        let report = solve(&model, &z, &z, &cfg).unwrap();
        assert!(report.outer_iterations > k_epsilon(cfg.r));
        assert!(report.certificate.passes(), "{:?}", report.certificate);
        assert!(report.certificate.dual_norm <= cfg.epsilon / 2.0 + 1e-10);
        let x = report.x.as_vector();
        assert!((x[0] - 1.0).abs() < 1e-3 && x[1] < 1e-3, "{x}");
        // Multiplier of the KKT system: x₁ - 2 + λ = 0 ⇒ λ ≈ 1.
        assert!((report.lambda_tilde[0] - 1.0).abs() < 1e-2);
        let rhos: Vec<f64> = report.trace.iter().map(|r| r.rho).collect();
        assert!(rhos.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] * cfg.r));
        assert_eq!(rhos[1], cfg.rho0 * cfg.r);
    }

    #[test]
    fn penalty_rule_follows_recorded_history() {
        let model = affine();
        let z = InteriorPoint::new(&model.domain, v(&[0.5, 0.5])).unwrap();
        let mut cfg = DriverConfig::new(1e-4);
        cfg.oracle = OracleMode::Deterministic;
        let report = solve(&model, &z, &z, &cfg).unwrap();
        let t = &report.trace;
        for k in 1..t.len() - 1 {
            let grew = t[k].shifted_feasibility > cfg.alpha * t[k - 1].shifted_feasibility;
            let expected = if grew { t[k].rho * cfg.r } else { t[k].rho };
            assert_eq!(t[k + 1].rho, expected, "outer iteration {k}");
        }
    }

    #[test]
    fn unconstrained_model_keeps_initial_multiplier() {
        struct Free(BarrierDomain);
        impl ConicModel for Free {
            fn domain(&self) -> &BarrierDomain {
                &self.0
            }
            fn num_constraints(&self) -> usize {
                0
            }
            fn objective(&self, x: &DVector<f64>) -> f64 {
                0.5 * (x[0] - 1.0).powi(2)
            }
            fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
                v(&[x[0] - 1.0])
            }
            fn objective_hvp(&self, _x: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
                d.clone()
            }
            fn constraints(&self, _x: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(0)
            }
            fn jacobian_apply(&self, _x: &DVector<f64>, _d: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(0)
            }
            fn jacobian_transpose_apply(&self, _x: &DVector<f64>, _w: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(1)
            }
            fn constraint_hvp(&self, _x: &DVector<f64>, _w: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(d.len())
            }
        }
        let model = Free(BarrierDomain::orthant(VarLayout::conic_only(1)));
        let z = InteriorPoint::new(&model.0, v(&[3.0])).unwrap();
        let mut cfg = DriverConfig::new(1e-4);
        cfg.oracle = OracleMode::Deterministic;
        let report = solve(&model, &z, &z, &cfg).unwrap();
        assert_eq!(report.lambda_tilde.len(), 0);
        assert_eq!(report.outer_iterations, k_epsilon(cfg.r) + 1);
        assert!((report.x.as_vector()[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn init_point_resets_only_on_strict_excess() {
        let model = affine();
        let z = InteriorPoint::new(&model.domain, v(&[0.5, 0.5])).unwrap();
        let params = ALParameters::anchored(&model, v(&[0.0]), 100.0, 0.1, z.as_vector());
        let state = |x: DVector<f64>| ALState {
            k: 1,
            x: InteriorPoint::new(&model.domain, x).unwrap(),
            lambda: v(&[0.0]),
            lambda_tilde: v(&[0.0]),
            rho: 100.0,
            ctilde_history: vec![1.0],
        };
        // The anchor itself ties with the reference level: keep it.
        let (_, reset) = init_point(&model, &state(z.as_vector().clone()), &params, &z).unwrap();
        assert!(!reset);
        // Far from feasible with a large penalty: reset.
        let (start, reset) = init_point(&model, &state(v(&[3.0, 3.0])), &params, &z).unwrap();
        assert!(reset);
        assert_eq!(start, z);
    }

    #[test]
    fn anchor_search_finds_nearly_feasible_point() {
        let model = affine();
        let x0 = InteriorPoint::new(&model.domain, v(&[2.0, 3.0])).unwrap();
        let z = find_anchor(&model, &x0, 1e-4, OracleMode::Deterministic).unwrap();
        assert!(model.constraints(z.as_vector()).norm() <= 5e-5);
        assert!(model.domain.is_interior(z.as_vector()));
    }

    #[test]
    fn infeasible_anchor_is_rejected() {
        let model = affine();
        let z = InteriorPoint::new(&model.domain, v(&[1.0, 1.0])).unwrap();
        let cfg = DriverConfig::new(1e-4);
        assert!(matches!(
            solve(&model, &z, &z, &cfg),
            Err(DriverError::AnchorInfeasible { .. })
        ));
    }
}
