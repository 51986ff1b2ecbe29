//! Newton-CG barrier augmented Lagrangian method for nonconvex conic programs.

// Negated comparisons are used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod capped_cg;
pub mod eig_oracle;
pub mod newton_cg;
pub mod model;
pub mod driver;
pub mod experiments;
pub mod sparsa;

pub use barrier::{BarrierDomain, BarrierError, ConeBarrier, InteriorPoint, Orthant, PreconditionerFactor, VarLayout};
pub use capped_cg::{capped_cg, CappedCgConfig, CappedCgError, DirectionKind, KrylovOutcome};
pub use eig_oracle::{min_eig_oracle, OracleConfig, OracleError, OracleKind, OracleMode, OracleOutcome};
pub use newton_cg::{
    solve_subproblem, solve_subproblem_observed, HessianOperator, NewtonCgConfig, NewtonCgError,
    SmoothObjective, StepKind, SubproblemObjective, SubproblemResult,
};
pub use model::{
    al_gradient, al_hvp, al_value, check_fosp, check_sosp, verify_derivatives, ALParameters, Certificate,
    ConicModel, ModelError,
};
pub use driver::{find_anchor, k_epsilon, mu_schedule, solve, solve_observed, DriverConfig, DriverError, SolveReport};
pub use experiments::{Dims, Factors, Family, Instance};
pub use sparsa::{sparsa_solve, SparsaConfig, SparsaError, SparsaResult};
