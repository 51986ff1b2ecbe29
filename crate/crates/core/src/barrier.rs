//! Logarithmically homogeneous self-concordant barriers and the local
//! geometry they induce.
//!
//! Variables are laid out as a free block followed by a conic block. The free
//! block carries no barrier term and is measured with the identity metric, so
//! the block preconditioner is `diag(I, M_c)` with `M_c M_cᵀ = ∇²B(x_c)⁻¹`.
//! The nonnegative orthant ships as the concrete cone; other cones plug in
//! through [`ConeBarrier`] and get a Cholesky-based preconditioner.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Smallest value a conic coordinate may take and still count as interior.
pub const INTERIOR_THRESHOLD: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BarrierError {
    #[error("point is not in the interior of the cone (coordinate {index} = {value:e})")]
    NotInterior { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("barrier Hessian is numerically indefinite; Cholesky factorization failed")]
    FactorizationFailure,
}

/// Split of the variable vector into a free block and a conic block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub free: usize,
    pub conic: usize,
}

impl VarLayout {
    pub fn new(free: usize, conic: usize) -> Self {
        Self { free, conic }
    }

    pub fn conic_only(conic: usize) -> Self {
        Self { free: 0, conic }
    }

    pub fn dim(&self) -> usize {
        self.free + self.conic
    }
}

/// A ϑ-LHSC barrier on the conic block.
///
/// Implementations only see the conic coordinates. `hessian` is only used by
/// the default (Cholesky) preconditioner path; cones with a cheap diagonal
/// factor override [`ConeBarrier::diagonal_factor`].
pub trait ConeBarrier: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;

    /// The barrier parameter ϑ.
    fn theta(&self) -> f64;

    /// Index and value of the first coordinate that violates interiority.
    fn interior_violation(&self, x: &[f64]) -> Option<(usize, f64)>;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> DVector<f64>;

    fn hessian_apply(&self, x: &[f64], v: &[f64]) -> DVector<f64>;

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            h.set_column(j, &self.hessian_apply(x, &e));
            e[j] = 0.0;
        }
        h
    }

    /// Diagonal `m` with `diag(m)² = ∇²B(x)⁻¹`, when such a factor is available.
    fn diagonal_factor(&self, _x: &[f64]) -> Option<DVector<f64>> {
        None
    }

    /// Whether `s` lies in the dual cone, up to `tol`. Returns the worst
    /// violation (0 when inside).
    fn dual_cone_violation(&self, s: &[f64]) -> f64;
}

/// `B(x) = -Σ ln x_i` on the nonnegative orthant, ϑ = n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orthant {
    dim: usize,
}

impl Orthant {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl ConeBarrier for Orthant {
    fn dim(&self) -> usize {
        self.dim
    }

    fn theta(&self) -> f64 {
        self.dim as f64
    }

    fn interior_violation(&self, x: &[f64]) -> Option<(usize, f64)> {
        x.iter()
            .enumerate()
            .find(|(_, &v)| !(v > INTERIOR_THRESHOLD) || !v.is_finite())
            .map(|(i, &v)| (i, v))
    }

    fn value(&self, x: &[f64]) -> f64 {
        -x.iter().map(|v| v.ln()).sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().map(|v| -1.0 / v))
    }

    fn hessian_apply(&self, x: &[f64], v: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(v).map(|(xi, vi)| vi / (xi * xi)))
    }

    fn diagonal_factor(&self, x: &[f64]) -> Option<DVector<f64>> {
        Some(DVector::from_column_slice(x))
    }

    fn dual_cone_violation(&self, s: &[f64]) -> f64 {
        s.iter().fold(0.0_f64, |worst, &v| worst.max(-v))
    }
}

/// A cone barrier together with the variable layout it acts on.
#[derive(Debug, Clone)]
pub struct BarrierDomain {
    layout: VarLayout,
    cone: Arc<dyn ConeBarrier>,
}

impl BarrierDomain {
    pub fn new(layout: VarLayout, cone: Arc<dyn ConeBarrier>) -> Self {
        assert_eq!(
            layout.conic,
            cone.dim(),
            "cone dimension must match the conic block"
        );
        if layout.conic > 0 {
            assert!(cone.theta() >= 1.0, "barrier parameter must be at least 1");
        }
        Self { layout, cone }
    }

    /// Nonnegative orthant on the conic block, free variables in front.
    pub fn orthant(layout: VarLayout) -> Self {
        Self::new(layout, Arc::new(Orthant::new(layout.conic)))
    }

    pub fn layout(&self) -> VarLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn theta(&self) -> f64 {
        if self.layout.conic == 0 {
            0.0
        } else {
            self.cone.theta()
        }
    }

    pub fn cone(&self) -> &dyn ConeBarrier {
        self.cone.as_ref()
    }

    fn conic<'a>(&self, x: &'a DVector<f64>) -> &'a [f64] {
        &x.as_slice()[self.layout.free..]
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<(), BarrierError> {
        if v.len() != self.dim() {
            return Err(BarrierError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn check_interior(&self, x: &DVector<f64>) -> Result<(), BarrierError> {
        self.check_dim(x)?;
        match self.cone.interior_violation(self.conic(x)) {
            Some((i, value)) => Err(BarrierError::NotInterior {
                index: self.layout.free + i,
                value,
            }),
            None => Ok(()),
        }
    }

    pub fn is_interior(&self, x: &DVector<f64>) -> bool {
        self.check_interior(x).is_ok()
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64, BarrierError> {
        self.check_interior(x)?;
        Ok(self.cone.value(self.conic(x)))
    }

    /// `∇B(x)`, zero on the free block.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, BarrierError> {
        self.check_interior(x)?;
        let mut g = DVector::zeros(self.dim());
        g.rows_mut(self.layout.free, self.layout.conic)
            .copy_from(&self.cone.gradient(self.conic(x)));
        Ok(g)
    }

    /// `∇²B(x) v`, the Hessian of the barrier itself (zero on the free block).
    pub fn hessian_apply(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>, BarrierError> {
        self.check_interior(x)?;
        self.check_dim(v)?;
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(self.layout.free, self.layout.conic)
            .copy_from(&self.cone.hessian_apply(self.conic(x), self.conic(v)));
        Ok(out)
    }

    /// The local metric `diag(I, ∇²B(x)) v` that defines `‖·‖_x`.
    pub fn metric_apply(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>, BarrierError> {
        let mut out = self.hessian_apply(x, v)?;
        out.rows_mut(0, self.layout.free)
            .copy_from(&v.rows(0, self.layout.free));
        Ok(out)
    }

    pub fn preconditioner(&self, x: &DVector<f64>) -> Result<PreconditionerFactor, BarrierError> {
        self.check_interior(x)?;
        let free = self.layout.free;
        let xc = self.conic(x);
        if let Some(diag) = self.cone.diagonal_factor(xc) {
            let mut full = DVector::from_element(self.dim(), 1.0);
            full.rows_mut(free, self.layout.conic).copy_from(&diag);
            return Ok(PreconditionerFactor::Diagonal(full));
        }
        let hess = self.cone.hessian(xc);
        let chol = Cholesky::new(hess).ok_or(BarrierError::FactorizationFailure)?;
        Ok(PreconditionerFactor::Cholesky { free, chol })
    }

    /// `‖v‖_x`.
    pub fn local_norm(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64, BarrierError> {
        self.check_dim(v)?;
        let m = self.preconditioner(x)?;
        Ok(m.apply_inverse(v).norm())
    }

    /// `‖g‖_x*`, computed as `‖Mᵀ g‖`.
    pub fn dual_local_norm(&self, x: &DVector<f64>, g: &DVector<f64>) -> Result<f64, BarrierError> {
        self.check_dim(g)?;
        let m = self.preconditioner(x)?;
        Ok(m.apply_transpose(g).norm())
    }

    /// Dual-cone membership of `s` on the conic block.
    ///
    /// With `scale = Some(μ)` the sufficient condition `‖s/μ + ∇B(x)‖_x* ≤ 1`
    /// is evaluated as well; it is computed on the conic block only, since the
    /// free block has no dual-cone constraint to certify.
    pub fn dual_cone_certificate(
        &self,
        x: &DVector<f64>,
        s: &DVector<f64>,
        tol: f64,
        scale: Option<f64>,
    ) -> Result<ConeCertificate, BarrierError> {
        self.check_dim(s)?;
        self.check_interior(x)?;
        let worst_violation = self.cone.dual_cone_violation(self.conic(s));
        let sufficient = match scale {
            Some(mu) => {
                let mut shifted = s / mu + self.gradient(x)?;
                shifted.rows_mut(0, self.layout.free).fill(0.0);
                Some(self.dual_local_norm(x, &shifted)? <= 1.0)
            }
            None => None,
        };
        Ok(ConeCertificate {
            member: worst_violation <= tol,
            worst_violation,
            sufficient,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeCertificate {
    pub member: bool,
    pub worst_violation: f64,
    /// Outcome of the `‖s/μ + ∇B(x)‖_x* ≤ 1` test, when a scale was supplied.
    pub sufficient: Option<bool>,
}

/// A factor `M` with `M Mᵀ = diag(I, ∇²B(x))⁻¹`.
#[derive(Debug, Clone)]
pub enum PreconditionerFactor {
    /// Full-length diagonal of `M`.
    Diagonal(DVector<f64>),
    /// `M = diag(I, L⁻ᵀ)` where `L Lᵀ` is the conic Hessian.
    Cholesky { free: usize, chol: Cholesky<f64, Dyn> },
}

impl PreconditionerFactor {
    pub fn dim(&self) -> usize {
        match self {
            Self::Diagonal(d) => d.len(),
            Self::Cholesky { free, chol } => free + chol.l_dirty().nrows(),
        }
    }

    /// `M d`.
    pub fn apply(&self, d: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Diagonal(m) => m.component_mul(d),
            Self::Cholesky { free, chol } => {
                let mut out = d.clone();
                let mut tail = d.rows(*free, d.len() - free).into_owned();
                chol.l().tr_solve_lower_triangular_mut(&mut tail);
                out.rows_mut(*free, tail.len()).copy_from(&tail);
                out
            }
        }
    }

    /// `Mᵀ g`.
    pub fn apply_transpose(&self, g: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Diagonal(m) => m.component_mul(g),
            Self::Cholesky { free, chol } => {
                let mut out = g.clone();
                let mut tail = g.rows(*free, g.len() - free).into_owned();
                chol.l().solve_lower_triangular_mut(&mut tail);
                out.rows_mut(*free, tail.len()).copy_from(&tail);
                out
            }
        }
    }

    /// `M⁻¹ y`.
    pub fn apply_inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Diagonal(m) => y.component_div(m),
            Self::Cholesky { free, chol } => {
                let mut out = y.clone();
                let tail = y.rows(*free, y.len() - free);
                let lt = chol.l().transpose() * tail;
                out.rows_mut(*free, lt.len()).copy_from(&lt);
                out
            }
        }
    }

    /// `M` as a dense matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            out.set_column(j, &self.apply(&e));
            e[j] = 0.0;
        }
        out
    }
}

/// A point whose conic block is strictly interior.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorPoint(DVector<f64>);

impl InteriorPoint {
    pub fn new(domain: &BarrierDomain, x: DVector<f64>) -> Result<Self, BarrierError> {
        domain.check_interior(&x)?;
        Ok(Self(x))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl AsRef<DVector<f64>> for InteriorPoint {
    fn as_ref(&self) -> &DVector<f64> {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn conic(n: usize) -> BarrierDomain {
        BarrierDomain::orthant(VarLayout::conic_only(n))
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn value_examples() {
        assert_eq!(conic(3).value(&v(&[1.0, 1.0, 1.0])).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert_relative_eq!(conic(2).value(&v(&[e, e])).unwrap(), -2.0);
        assert_relative_eq!(conic(2).value(&v(&[2.0, 0.5])).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_boundary_points() {
        let err = conic(2).value(&v(&[1.0, 0.0])).unwrap_err();
        assert_eq!(err, BarrierError::NotInterior { index: 1, value: 0.0 });
        assert!(conic(1).value(&v(&[1e-301])).is_err());
        assert!(conic(1).value(&v(&[f64::NAN])).is_err());
        let mixed = BarrierDomain::orthant(VarLayout::new(1, 1));
        // free coordinates may be anything
        assert!(mixed.value(&v(&[-5.0, 1.0])).is_ok());
        assert!(matches!(
            mixed.value(&v(&[1.0, -1.0])),
            Err(BarrierError::NotInterior { index: 1, .. })
        ));
    }

    #[test]
    fn gradient_examples() {
        let g = conic(2).gradient(&v(&[1.0, 1.0])).unwrap();
        assert_eq!(g, v(&[-1.0, -1.0]));
        let dom = conic(2);
        let x = v(&[1.0, 1.0]);
        assert_relative_eq!(dom.dual_local_norm(&x, &g).unwrap(), 2f64.sqrt());

        let x = v(&[2.0]);
        let g = conic(1).gradient(&x).unwrap();
        assert_eq!(g, v(&[-0.5]));
        assert_relative_eq!(-x.dot(&g), 1.0);

        let mixed = BarrierDomain::orthant(VarLayout::new(1, 1));
        assert_eq!(mixed.gradient(&v(&[0.7, 3.0])).unwrap(), v(&[0.0, -1.0 / 3.0]));
    }

    #[test]
    fn hessian_and_metric_examples() {
        assert_eq!(conic(1).hessian_apply(&v(&[2.0]), &v(&[1.0])).unwrap(), v(&[0.25]));
        assert_eq!(
            conic(2).hessian_apply(&v(&[1.0, 1.0]), &v(&[3.0, 4.0])).unwrap(),
            v(&[3.0, 4.0])
        );
        let free = BarrierDomain::orthant(VarLayout::new(1, 0));
        assert_eq!(free.metric_apply(&v(&[0.3]), &v(&[7.0])).unwrap(), v(&[7.0]));
        assert_eq!(free.hessian_apply(&v(&[0.3]), &v(&[7.0])).unwrap(), v(&[0.0]));
    }

    #[test]
    fn norm_examples() {
        let dom = conic(1);
        let x = v(&[2.0]);
        assert_relative_eq!(dom.local_norm(&x, &v(&[1.0])).unwrap(), 0.5);
        assert_relative_eq!(dom.dual_local_norm(&x, &v(&[1.0])).unwrap(), 2.0);
        assert_eq!(dom.local_norm(&x, &v(&[0.0])).unwrap(), 0.0);
    }

    #[test]
    fn preconditioner_examples() {
        let m = conic(2).preconditioner(&v(&[2.0, 3.0])).unwrap();
        assert_eq!(m.to_dense(), DMatrix::from_diagonal(&v(&[2.0, 3.0])));
        let m = conic(3).preconditioner(&v(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(m.to_dense(), DMatrix::identity(3, 3));
        let mixed = BarrierDomain::orthant(VarLayout::new(2, 1));
        let m = mixed.preconditioner(&v(&[-3.0, 4.0, 0.5])).unwrap();
        assert_eq!(m.to_dense(), DMatrix::from_diagonal(&v(&[1.0, 1.0, 0.5])));
    }

    /// The orthant barrier routed through the generic Cholesky path.
    #[derive(Debug)]
    struct DenseOrthant(Orthant);

    impl ConeBarrier for DenseOrthant {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn theta(&self) -> f64 {
            self.0.theta()
        }
        fn interior_violation(&self, x: &[f64]) -> Option<(usize, f64)> {
            self.0.interior_violation(x)
        }
        fn value(&self, x: &[f64]) -> f64 {
            self.0.value(x)
        }
        fn gradient(&self, x: &[f64]) -> DVector<f64> {
            self.0.gradient(x)
        }
        fn hessian_apply(&self, x: &[f64], v: &[f64]) -> DVector<f64> {
            self.0.hessian_apply(x, v)
        }
        fn dual_cone_violation(&self, s: &[f64]) -> f64 {
            self.0.dual_cone_violation(s)
        }
    }

    #[test]
    fn cholesky_path_matches_diagonal_path() {
        let layout = VarLayout::new(1, 3);
        let dense = BarrierDomain::new(layout, Arc::new(DenseOrthant(Orthant::new(3))));
        let diag = BarrierDomain::orthant(layout);
        let x = v(&[0.4, 0.5, 2.0, 3.0]);
        let g = v(&[1.0, -2.0, 0.5, 4.0]);
        let md = dense.preconditioner(&x).unwrap();
        assert!(matches!(md, PreconditionerFactor::Cholesky { .. }));
        let mm = md.to_dense() * md.to_dense().transpose();
        let expected = DMatrix::from_diagonal(&v(&[1.0, 0.25, 4.0, 9.0]));
        assert!((mm - expected).norm() < 1e-12);
        assert_relative_eq!(
            dense.dual_local_norm(&x, &g).unwrap(),
            diag.dual_local_norm(&x, &g).unwrap(),
            max_relative = 1e-12
        );
        let roundtrip = md.apply_inverse(&md.apply(&g));
        assert!((roundtrip - &g).norm() < 1e-12);
    }

    #[test]
    fn cholesky_factor_inverts_a_dense_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let m = PreconditionerFactor::Cholesky {
            free: 1,
            chol: Cholesky::new(h.clone()).unwrap(),
        };
        let dense = m.to_dense();
        let mut target = DMatrix::identity(3, 3);
        target
            .view_mut((1, 1), (2, 2))
            .copy_from(&h.try_inverse().unwrap());
        assert!((&dense * dense.transpose() - target).norm() < 1e-12);
        let g = v(&[0.5, -1.0, 2.0]);
        assert!((m.apply_transpose(&g) - dense.transpose() * &g).norm() < 1e-12);
        assert!((m.apply_inverse(&m.apply(&g)) - &g).norm() < 1e-12);
    }

    #[test]
    fn dual_cone_certificate_examples() {
        let dom = conic(2);
        let x = v(&[0.3, 2.0]);
        assert!(dom.dual_cone_certificate(&x, &v(&[0.0, 0.0]), 0.0, None).unwrap().member);
        let c = dom.dual_cone_certificate(&x, &v(&[1.0, -1.0]), 1e-8, None).unwrap();
        assert!(!c.member);
        assert_eq!(c.worst_violation, 1.0);

        // s = -(1 - 0.9/√2)·∇B(x) at x = (1,1) gives ‖s + ∇B‖* = 0.9.
        let x = v(&[1.0, 1.0]);
        let grad = dom.gradient(&x).unwrap();
        let s = -(1.0 - 0.9 / 2f64.sqrt()) * &grad;
        assert_relative_eq!(dom.dual_local_norm(&x, &(&s + &grad)).unwrap(), 0.9, epsilon = 1e-12);
        let c = dom.dual_cone_certificate(&x, &s, 1e-8, Some(1.0)).unwrap();
        assert_eq!(c.sufficient, Some(true));
        assert!(c.member);
    }
}
