//! Model contract for `min f(x) s.t. c(x) = 0, x ∈ K`, augmented-Lagrangian
//! assembly, and approximate stationarity certificates.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::barrier::{BarrierDomain, BarrierError, ConeCertificate};
use crate::eig_oracle::densify;
use crate::newton_cg::{HessianOperator, SmoothObjective};

/// Componentwise tolerance for numerical dual-cone membership.
pub const CONE_TOL: f64 = 1e-8;
/// Singular values below this fraction of the largest are treated as zero
/// when computing the null space of the preconditioned Jacobian.
pub const RANK_TOL: f64 = 1e-10;
/// Relative tolerance of the finite-difference derivative probe.
pub const PROBE_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} disagrees with finite differences (relative error {rel_err:.3e})")]
    DerivativeMismatch { what: &'static str, rel_err: f64 },
}

/// A smooth objective and equality constraints over a barrier domain.
///
/// Second-order constraint information is exposed only through weighted
/// products `Σ wᵢ ∇²cᵢ(x) v`.
pub trait ConicModel: Send + Sync {
    fn domain(&self) -> &BarrierDomain;
    fn num_constraints(&self) -> usize;
    fn objective(&self, x: &DVector<f64>) -> f64;
    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn objective_hvp(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    fn constraints(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `J(x) v`, where row `i` of `J` is `∇cᵢ(x)ᵀ`.
    fn jacobian_apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    /// `J(x)ᵀ w`.
    fn jacobian_transpose_apply(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64>;
    /// `Σ wᵢ ∇²cᵢ(x) v`.
    fn constraint_hvp(&self, x: &DVector<f64>, w: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;

    fn dim(&self) -> usize {
        self.domain().dim()
    }

    /// `∇²f(x) + Σ wᵢ ∇²cᵢ(x)` as an operator. Models with expensive
    /// per-point setup override this to cache it across matvecs.
    fn lagrangian_hessian_at<'a>(&'a self, x: &DVector<f64>, w: &DVector<f64>) -> HessianOperator<'a> {
        let x = x.clone();
        let w = w.clone();
        let weighted = w.iter().any(|&wi| wi != 0.0);
        Box::new(move |v| {
            let mut out = self.objective_hvp(&x, v);
            if weighted {
                out += self.constraint_hvp(&x, &w, v);
            }
            out
        })
    }

    /// The dense `m × n` Jacobian.
    fn jacobian_dense(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let m = self.num_constraints();
        let mut jac = DMatrix::zeros(m, self.dim());
        let mut e = DVector::zeros(m);
        for i in 0..m {
            e[i] = 1.0;
            jac.set_row(i, &self.jacobian_transpose_apply(x, &e).transpose());
            e[i] = 0.0;
        }
        jac
    }
}

/// Multiplier, penalty, barrier weight and constraint shift `c(z_ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ALParameters {
    pub lambda: DVector<f64>,
    pub rho: f64,
    pub mu: f64,
    pub shift: DVector<f64>,
}

impl ALParameters {
    /// Parameters shifted by the constraint value at the anchor `z`.
    pub fn anchored<M: ConicModel + ?Sized>(
        model: &M,
        lambda: DVector<f64>,
        rho: f64,
        mu: f64,
        z: &DVector<f64>,
    ) -> Self {
        Self {
            lambda,
            rho,
            mu,
            shift: model.constraints(z),
        }
    }

    /// `c̃(x) = c(x) - c(z_ε)`.
    pub fn shifted_constraints<M: ConicModel + ?Sized>(&self, model: &M, x: &DVector<f64>) -> DVector<f64> {
        model.constraints(x) - &self.shift
    }
}

/// `f + λᵀc̃ + (ρ/2)‖c̃‖²`, the augmented Lagrangian without its barrier term.
pub struct PenaltyObjective<'a, M: ?Sized> {
    pub model: &'a M,
    pub params: &'a ALParameters,
}

impl<'a, M: ConicModel + ?Sized> SmoothObjective for PenaltyObjective<'a, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let ct = self.params.shifted_constraints(self.model, x);
        self.model.objective(x) + self.params.lambda.dot(&ct) + 0.5 * self.params.rho * ct.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let ct = self.params.shifted_constraints(self.model, x);
        let w = &self.params.lambda + self.params.rho * ct;
        let mut g = self.model.objective_gradient(x);
        if !w.is_empty() {
            g += self.model.jacobian_transpose_apply(x, &w);
        }
        g
    }

    fn hessian_at<'b>(&'b self, x: &DVector<f64>) -> HessianOperator<'b> {
        let ct = self.params.shifted_constraints(self.model, x);
        let w = &self.params.lambda + self.params.rho * ct;
        let lag = self.model.lagrangian_hessian_at(x, &w);
        if w.is_empty() {
            return lag;
        }
        let model = self.model;
        let rho = self.params.rho;
        let x = x.clone();
        Box::new(move |v| {
            let jv = model.jacobian_apply(&x, v);
            lag(v) + rho * model.jacobian_transpose_apply(&x, &jv)
        })
    }
}

/// `L_μ(x, λ; ρ) = f(x) + μB(x) + λᵀc̃(x) + (ρ/2)‖c̃(x)‖²`.
pub fn al_value<M: ConicModel + ?Sized>(model: &M, p: &ALParameters, x: &DVector<f64>) -> Result<f64, ModelError> {
    let b = model.domain().value(x)?;
    Ok(PenaltyObjective { model, params: p }.value(x) + p.mu * b)
}

/// `∇f + Jᵀ(λ + ρc̃) + μ∇B`.
pub fn al_gradient<M: ConicModel + ?Sized>(
    model: &M,
    p: &ALParameters,
    x: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    let gb = model.domain().gradient(x)?;
    Ok(PenaltyObjective { model, params: p }.gradient(x) + p.mu * gb)
}

/// `∇²L_μ v = ∇²f v + Σ(λ + ρc̃)ᵢ∇²cᵢ v + ρJᵀJv + μ∇²B v`.
pub fn al_hvp<M: ConicModel + ?Sized>(
    model: &M,
    p: &ALParameters,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    let hb = model.domain().hessian_apply(x, v)?;
    let penalty = PenaltyObjective { model, params: p };
    let op = penalty.hessian_at(x);
    Ok(op(v) + p.mu * hb)
}

/// Residuals of approximate first- and second-order stationarity.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    /// `‖c(x)‖`.
    pub feasibility: f64,
    /// `‖∇f(x) + J(x)ᵀλ‖_x*`.
    pub dual_norm: f64,
    pub cone: ConeCertificate,
    /// Smallest eigenvalue of the preconditioned Lagrangian Hessian restricted
    /// to the null space of the preconditioned Jacobian; `+∞` when that space
    /// is trivial.
    pub second_order: Option<f64>,
    /// The Jacobian was numerically rank-deficient at `x`.
    pub rank_deficient: bool,
    pub eps1: f64,
    pub eps2: Option<f64>,
}

impl Certificate {
    pub fn first_order_ok(&self) -> bool {
        self.feasibility <= self.eps1 && self.dual_norm <= self.eps1 && self.cone.member
    }

    pub fn second_order_ok(&self) -> Option<bool> {
        match (self.second_order, self.eps2) {
            (Some(lam), Some(eps2)) => Some(lam >= -eps2),
            _ => None,
        }
    }

    /// First-order conditions hold, and second-order ones too when evaluated.
    pub fn passes(&self) -> bool {
        self.first_order_ok() && self.second_order_ok().unwrap_or(true)
    }
}

/// Evaluates feasibility, dual-cone membership and the dual-norm bound of
/// `∇f + Jᵀλ` at `x`.
pub fn check_fosp<M: ConicModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    eps1: f64,
) -> Result<Certificate, ModelError> {
    let domain = model.domain();
    domain.check_interior(x)?;
    expect_len("multiplier", model.num_constraints(), lambda.len())?;
    let mut s = model.objective_gradient(x);
    if !lambda.is_empty() {
        s += model.jacobian_transpose_apply(x, lambda);
    }
    Ok(Certificate {
        feasibility: model.constraints(x).norm(),
        dual_norm: domain.dual_local_norm(x, &s)?,
        cone: domain.dual_cone_certificate(x, &s, CONE_TOL, None)?,
        second_order: None,
        rank_deficient: false,
        eps1,
        eps2: None,
    })
}

/// [`check_fosp`] plus the projected second-order test. Densifies the
/// Hessian, so it is meant for verification at moderate dimension.
pub fn check_sosp<M: ConicModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    eps1: f64,
    eps2: f64,
) -> Result<Certificate, ModelError> {
    let mut cert = check_fosp(model, x, lambda, eps1)?;
    let factor = model.domain().preconditioner(x)?;
    let n = model.dim();
    let lag = model.lagrangian_hessian_at(x, lambda);
    let mut apply = |v: &DVector<f64>| factor.apply_transpose(&lag(&factor.apply(v)));
    let w = densify(&mut apply, n).expect("operator preserves dimension");

    let (basis, rank_deficient) = if model.num_constraints() == 0 {
        (DMatrix::identity(n, n), false)
    } else {
        let jm = model.jacobian_dense(x) * factor.to_dense();
        null_space(&jm)
    };
    if rank_deficient {
        log::warn!("Jacobian is numerically rank-deficient at the certified point");
    }
    cert.second_order = Some(if basis.ncols() == 0 {
        f64::INFINITY
    } else {
        let projected = basis.tr_mul(&(&w * &basis));
        let projected = (&projected + projected.transpose()) * 0.5;
        SymmetricEigen::new(projected)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    });
    cert.rank_deficient = rank_deficient;
    cert.eps2 = Some(eps2);
    Ok(cert)
}

/// Orthonormal basis of `{d : A d = 0}` for an `m × n` matrix `A`, and
/// whether `A` has numerical rank below `min(m, n)`.
pub fn null_space(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (m, n) = a.shape();
    // Pad to a square matrix so the SVD returns a complete right basis.
    let rows = m.max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m, n)).copy_from(a);
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = RANK_TOL * sigma_max;
    let null: Vec<usize> = (0..n)
        .filter(|&i| sigma_max == 0.0 || svd.singular_values[i] <= cutoff)
        .collect();
    let rank = n - null.len();
    let mut basis = DMatrix::zeros(n, null.len());
    for (j, &i) in null.iter().enumerate() {
        basis.set_column(j, &v_t.row(i).transpose());
    }
    (basis, rank < m.min(n))
}

fn expect_len(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { what, expected, got })
    }
}

/// Largest relative discrepancy observed by [`verify_derivatives`], per
/// callable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeReport {
    pub gradient: f64,
    pub hessian: f64,
    pub jacobian: f64,
    pub jacobian_transpose: f64,
    pub constraint_hessian: f64,
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1.0)
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let norm = v.norm();
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

/// Checks dimensions and compares every derivative callable against central
/// differences at the interior point `x`, along `probes` random directions.
pub fn verify_derivatives<M: ConicModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    probes: usize,
    seed: u64,
) -> Result<DerivativeReport, ModelError> {
    let domain = model.domain();
    domain.check_interior(x)?;
    let n = model.dim();
    let m = model.num_constraints();
    expect_len("point", n, x.len())?;
    expect_len("constraint vector", m, model.constraints(x).len())?;
    expect_len("objective gradient", n, model.objective_gradient(x).len())?;

    let layout = domain.layout();
    let min_conic = x.rows(layout.free, layout.conic).min();
    let h = if layout.conic > 0 {
        (1e-6 * (1.0 + x.amax())).min(0.1 * min_conic)
    } else {
        1e-6 * (1.0 + x.amax())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = DerivativeReport {
        gradient: 0.0,
        hessian: 0.0,
        jacobian: 0.0,
        jacobian_transpose: 0.0,
        constraint_hessian: 0.0,
    };
    let grad = model.objective_gradient(x);
    for _ in 0..probes {
        let v = random_vector(n, &mut rng);
        let xp = x + h * &v;
        let xm = x - h * &v;

        let fd = (model.objective(&xp) - model.objective(&xm)) / (2.0 * h);
        let slope = grad.dot(&v);
        let e = (fd - slope).abs() / fd.abs().max(slope.abs()).max(1.0);
        report.gradient = report.gradient.max(e);

        let fd_h = (model.objective_gradient(&xp) - model.objective_gradient(&xm)) / (2.0 * h);
        let hv = model.objective_hvp(x, &v);
        expect_len("objective HVP", n, hv.len())?;
        report.hessian = report.hessian.max(rel_err(&hv, &fd_h));

        if m > 0 {
            let fd_j = (model.constraints(&xp) - model.constraints(&xm)) / (2.0 * h);
            let jv = model.jacobian_apply(x, &v);
            expect_len("Jacobian product", m, jv.len())?;
            report.jacobian = report.jacobian.max(rel_err(&jv, &fd_j));

            let w = random_vector(m, &mut rng);
            let jtw = model.jacobian_transpose_apply(x, &w);
            expect_len("Jacobian transpose product", n, jtw.len())?;
            let e = (jtw.dot(&v) - w.dot(&jv)).abs() / jtw.dot(&v).abs().max(w.dot(&jv).abs()).max(1.0);
            report.jacobian_transpose = report.jacobian_transpose.max(e);

            let fd_c = (model.jacobian_transpose_apply(&xp, &w) - model.jacobian_transpose_apply(&xm, &w)) / (2.0 * h);
            let cv = model.constraint_hvp(x, &w, &v);
            expect_len("constraint HVP", n, cv.len())?;
            report.constraint_hessian = report.constraint_hessian.max(rel_err(&cv, &fd_c));
        }
    }

    for (what, err) in [
        ("objective gradient", report.gradient),
        ("objective HVP", report.hessian),
        ("Jacobian product", report.jacobian),
        ("Jacobian transpose product", report.jacobian_transpose),
        ("constraint HVP", report.constraint_hessian),
    ] {
        if !(err <= PROBE_TOL) {
            return Err(ModelError::DerivativeMismatch { what, rel_err: err });
        }
    }
    Ok(report)
}
