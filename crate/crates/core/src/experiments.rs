//! Seeded test families: low-rank matrix recovery with a Frobenius-ball
//! constraint, and nonnegative matrix factorization with simplex or sphere
//! constraints on `V`.
//!
//! Matrices are vectorized column-major, matching nalgebra's storage. Solver
//! vectors are laid out as `[vec(U), s]` for recovery and `[vec(U), vec(V)]`
//! for factorization.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::barrier::{BarrierDomain, InteriorPoint, VarLayout};
use crate::model::ConicModel;
use crate::newton_cg::HessianOperator;
use crate::sparsa::{project_column_simplex, project_frobenius_ball, project_sphere_nonneg, SparsaError};

/// Regularization weight of the factorization objective.
pub const NMF_GAMMA: f64 = 0.005;
/// Standard deviation of additive observation noise.
pub const NOISE_STD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("ground truth has zero Frobenius norm")]
    ZeroGroundTruth,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("column {0} of V has zero sum after clamping")]
    DegenerateColumn(usize),
    #[error("V is entirely nonpositive")]
    DegenerateSphere,
    #[error("solver vector has length {got}, expected {expected}")]
    VectorLength { expected: usize, got: usize },
    #[error("malformed instance bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Recovery,
    NmfSimplex,
    NmfSphere,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Recovery, Family::NmfSimplex, Family::NmfSphere];

    pub fn name(self) -> &'static str {
        match self {
            Family::Recovery => "recovery",
            Family::NmfSimplex => "nmf_simplex",
            Family::NmfSphere => "nmf_sphere",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown family `{s}` (expected recovery, nmf_simplex or nmf_sphere)"))
    }
}

/// Problem sizes `(n, l, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dims {
    pub n: usize,
    pub l: usize,
    pub m: usize,
}

impl Dims {
    pub fn new(n: usize, l: usize, m: usize) -> Self {
        assert!(n >= 1 && l >= 1 && m >= 1, "sizes must be positive");
        Self { n, l, m }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.n, self.l, self.m)
    }
}

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('x').collect();
        let parse = |p: &str| p.trim().parse::<usize>().ok().filter(|&v| v >= 1);
        match parts.as_slice() {
            [n, l, m] => match (parse(n), parse(l), parse(m)) {
                (Some(n), Some(l), Some(m)) => Ok(Dims { n, l, m }),
                _ => Err(format!("invalid grid cell `{s}`: sizes must be positive integers")),
            },
            _ => Err(format!("invalid grid cell `{s}`: expected NxLxM")),
        }
    }
}

/// Grid rows of the published comparison tables.
pub fn published_grid(family: Family) -> Vec<Dims> {
    let rows: &[(usize, usize, usize)] = match family {
        Family::Recovery => &[
            (20, 1, 40),
            (20, 2, 80),
            (40, 2, 160),
            (40, 4, 320),
            (60, 3, 360),
            (60, 6, 720),
            (80, 4, 640),
            (80, 8, 1280),
            (100, 5, 1000),
            (100, 10, 2000),
        ],
        Family::NmfSimplex => &[
            (20, 2, 10),
            (20, 2, 20),
            (20, 2, 30),
            (30, 3, 15),
            (30, 3, 30),
            (30, 3, 45),
            (40, 4, 20),
            (40, 4, 40),
            (40, 4, 60),
            (50, 5, 25),
            (50, 5, 50),
            (50, 5, 75),
        ],
        Family::NmfSphere => &[
            (20, 2, 5),
            (20, 2, 10),
            (20, 2, 15),
            (20, 2, 20),
            (20, 2, 25),
            (20, 2, 30),
            (40, 4, 10),
            (40, 4, 20),
            (40, 4, 30),
            (40, 4, 40),
            (40, 4, 50),
            (40, 4, 60),
        ],
    };
    rows.iter().map(|&(n, l, m)| Dims { n, l, m }).collect()
}

/// The rows of [`published_grid`] with `n ≤ 40`.
pub fn small_grid(family: Family) -> Vec<Dims> {
    published_grid(family).into_iter().filter(|d| d.n <= 40).collect()
}

/// The random stream used for instance `index` of a cell.
pub fn instance_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryInstance {
    pub dims: Dims,
    /// `m × n²` sensing matrix acting on column-major `vec(X)`.
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Squared radius of the Frobenius ball.
    pub b: f64,
    pub u_tilde: DMatrix<f64>,
    pub ground_truth: DMatrix<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfInstance {
    pub family: Family,
    pub dims: Dims,
    pub x: DMatrix<f64>,
    pub u_star: DMatrix<f64>,
    pub v_star: DMatrix<f64>,
    pub gamma: f64,
    pub ground_truth: DMatrix<f64>,
    pub seed: u64,
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let dist = Normal::new(0.0, std).expect("positive standard deviation");
    DMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

pub fn gen_recovery(dims: Dims, seed: u64) -> RecoveryInstance {
    let Dims { n, l, m } = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = normal_matrix(m, n * n, 1.0 / (m as f64).sqrt(), &mut rng);
    let u_tilde: DMatrix<f64> = DMatrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
    let ground_truth = &u_tilde * u_tilde.transpose();
    let noise = normal_matrix(m, 1, NOISE_STD, &mut rng);
    let y = &a * DVector::from_column_slice(ground_truth.as_slice()) + noise.column(0);
    RecoveryInstance {
        dims,
        b: u_tilde.norm_squared(),
        a,
        y,
        u_tilde,
        ground_truth,
        seed,
    }
}

pub fn gen_nmf(family: Family, dims: Dims, seed: u64) -> NmfInstance {
    assert!(family != Family::Recovery, "not a factorization family");
    let Dims { n, l, m } = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u_star = DMatrix::from_fn(n, l, |_, _| rng.random_range(0.0..=2.0));
    let v_tilde = DMatrix::from_fn(l, m, |_, _| rng.random::<f64>());
    let v_star = match family {
        Family::NmfSimplex => {
            let mut v = v_tilde;
            for mut col in v.column_iter_mut() {
                let s = col.sum();
                col /= s;
            }
            v
        }
        _ => &v_tilde * ((m as f64).sqrt() / v_tilde.norm()),
    };
    let ground_truth = &u_star * &v_star;
    let x = &ground_truth + normal_matrix(n, m, NOISE_STD, &mut rng);
    NmfInstance {
        family,
        dims,
        x,
        u_star,
        v_star,
        gamma: NMF_GAMMA,
        ground_truth,
        seed,
    }
}

/// A generated instance of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Recovery(Arc<RecoveryInstance>),
    Nmf(Arc<NmfInstance>),
}

/// Factors recovered from a solver: `U` alone for recovery, `(U, V)` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    pub u: DMatrix<f64>,
    pub v: Option<DMatrix<f64>>,
}

impl Factors {
    /// `UUᵀ` or `UV`.
    pub fn product(&self) -> DMatrix<f64> {
        match &self.v {
            None => &self.u * self.u.transpose(),
            Some(v) => &self.u * v,
        }
    }
}

/// `‖P - G‖_F / ‖G‖_F`.
pub fn relative_error(product: &DMatrix<f64>, ground_truth: &DMatrix<f64>) -> Result<f64, ExperimentError> {
    if product.shape() != ground_truth.shape() {
        return Err(ExperimentError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            product.shape(),
            ground_truth.shape()
        )));
    }
    let denom = ground_truth.norm();
    if denom == 0.0 {
        return Err(ExperimentError::ZeroGroundTruth);
    }
    Ok((product - ground_truth).norm() / denom)
}

impl Instance {
    pub fn generate(family: Family, dims: Dims, seed: u64) -> Self {
        match family {
            Family::Recovery => Instance::Recovery(Arc::new(gen_recovery(dims, seed))),
            _ => Instance::Nmf(Arc::new(gen_nmf(family, dims, seed))),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Instance::Recovery(_) => Family::Recovery,
            Instance::Nmf(inst) => inst.family,
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            Instance::Recovery(inst) => inst.dims,
            Instance::Nmf(inst) => inst.dims,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Instance::Recovery(inst) => inst.seed,
            Instance::Nmf(inst) => inst.seed,
        }
    }

    pub fn ground_truth(&self) -> &DMatrix<f64> {
        match self {
            Instance::Recovery(inst) => &inst.ground_truth,
            Instance::Nmf(inst) => &inst.ground_truth,
        }
    }

    /// The conic model solved by the barrier method.
    pub fn model(&self) -> Box<dyn ConicModel> {
        match self {
            Instance::Recovery(inst) => Box::new(bind_recovery(inst.clone())),
            Instance::Nmf(inst) => Box::new(bind_nmf(inst.clone())),
        }
    }

    /// Initial point of the barrier method: `U = √(b/(2nl))·𝟙, s = b/2` for
    /// recovery and `U = 𝟙, V = 𝟙/l` for factorization.
    pub fn initial_point(&self) -> DVector<f64> {
        match self {
            Instance::Recovery(inst) => {
                let Dims { n, l, .. } = inst.dims;
                let mut x = DVector::from_element(n * l + 1, (inst.b / (2.0 * (n * l) as f64)).sqrt());
                x[n * l] = inst.b / 2.0;
                x
            }
            Instance::Nmf(inst) => {
                let Dims { n, l, m } = inst.dims;
                let mut x = DVector::from_element(n * l + l * m, 1.0);
                x.rows_mut(n * l, l * m).fill(1.0 / l as f64);
                x
            }
        }
    }

    /// An exactly feasible interior point.
    pub fn anchor(&self) -> DVector<f64> {
        match self {
            Instance::Nmf(inst) if inst.family == Family::NmfSphere => {
                let Dims { n, l, m } = inst.dims;
                let mut x = DVector::from_element(n * l + l * m, 1.0);
                x.rows_mut(n * l, l * m).fill(1.0 / (l as f64).sqrt());
                x
            }
            _ => self.initial_point(),
        }
    }

    pub fn interior(&self, model: &dyn ConicModel, x: DVector<f64>) -> InteriorPoint {
        InteriorPoint::new(model.domain(), x).expect("generated points are interior")
    }

    /// Splits a barrier-method vector into factors (the slack is dropped).
    pub fn factors_from_model_vector(&self, x: &DVector<f64>) -> Result<Factors, ExperimentError> {
        let Dims { n, l, m } = self.dims();
        match self {
            Instance::Recovery(_) => {
                expect_len(n * l + 1, x.len())?;
                Ok(Factors {
                    u: DMatrix::from_column_slice(n, l, &x.as_slice()[..n * l]),
                    v: None,
                })
            }
            Instance::Nmf(_) => {
                expect_len(n * l + l * m, x.len())?;
                Ok(split_uv(x, n, l, m))
            }
        }
    }

    /// Splits a first-order-method vector (`vec(U)` or `[vec(U), vec(V)]`).
    pub fn factors_from_plain_vector(&self, x: &DVector<f64>) -> Result<Factors, ExperimentError> {
        let Dims { n, l, m } = self.dims();
        match self {
            Instance::Recovery(_) => {
                expect_len(n * l, x.len())?;
                Ok(Factors {
                    u: DMatrix::from_column_slice(n, l, x.as_slice()),
                    v: None,
                })
            }
            Instance::Nmf(_) => {
                expect_len(n * l + l * m, x.len())?;
                Ok(split_uv(x, n, l, m))
            }
        }
    }

    /// Objective of the original problem at the given factors.
    pub fn objective(&self, f: &Factors) -> f64 {
        match self {
            Instance::Recovery(inst) => recovery_value(inst, &f.u),
            Instance::Nmf(inst) => {
                let v = f.v.as_ref().expect("factorization has V");
                nmf_value(inst, &f.u, v)
            }
        }
    }

    /// Constraint violation: `[‖U‖²_F - b]₊`, `‖Vᵀ𝟙 - 𝟙‖` or `|‖V‖²_F - m|`.
    pub fn feasibility(&self, f: &Factors) -> f64 {
        match self {
            Instance::Recovery(inst) => (f.u.norm_squared() - inst.b).max(0.0),
            Instance::Nmf(inst) => {
                let v = f.v.as_ref().expect("factorization has V");
                match inst.family {
                    Family::NmfSimplex => v.row_sum().add_scalar(-1.0).norm(),
                    _ => (v.norm_squared() - inst.dims.m as f64).abs(),
                }
            }
        }
    }

    pub fn relative_error(&self, f: &Factors) -> Result<f64, ExperimentError> {
        relative_error(&f.product(), self.ground_truth())
    }

    /// Maps approximate solver output onto the feasible set: radial scaling
    /// of `U` for recovery; for factorization, clamp to the orthant and
    /// rescale `V` by a diagonal (column sums) or a scalar (Frobenius norm).
    pub fn feasibility_projection(&self, f: &Factors) -> Result<Factors, ExperimentError> {
        match self {
            Instance::Recovery(inst) => Ok(Factors {
                u: project_frobenius_ball(&f.u, inst.b.sqrt()),
                v: None,
            }),
            Instance::Nmf(inst) => {
                let u = f.u.map(|e| e.max(0.0));
                let mut v = f.v.as_ref().expect("factorization has V").map(|e| e.max(0.0));
                match inst.family {
                    Family::NmfSimplex => {
                        for (j, mut col) in v.column_iter_mut().enumerate() {
                            let s = col.sum();
                            if s <= 0.0 {
                                return Err(ExperimentError::DegenerateColumn(j));
                            }
                            col /= s;
                        }
                    }
                    _ => {
                        let norm = v.norm();
                        if norm == 0.0 {
                            return Err(ExperimentError::DegenerateSphere);
                        }
                        v *= (inst.dims.m as f64).sqrt() / norm;
                    }
                }
                Ok(Factors { u, v: Some(v) })
            }
        }
    }

    /// Starting vector of the first-order baseline (same factors as
    /// [`Instance::initial_point`]).
    pub fn plain_initial_point(&self) -> DVector<f64> {
        let x = self.initial_point();
        match self {
            Instance::Recovery(_) => x.rows(0, x.len() - 1).into_owned(),
            Instance::Nmf(_) => x,
        }
    }

    /// Objective of the first-order baseline on plain vectors.
    pub fn plain_value(&self, x: &DVector<f64>) -> f64 {
        self.objective(&self.factors_from_plain_vector(x).expect("length checked by caller"))
    }

    pub fn plain_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let Dims { n, l, m } = self.dims();
        match self {
            Instance::Recovery(inst) => {
                let u = DMatrix::from_column_slice(n, l, x.as_slice());
                let sym = recovery_sym_residual(inst, &u);
                DVector::from_column_slice((&sym * &u).as_slice())
            }
            Instance::Nmf(inst) => {
                let Factors { u, v } = split_uv(x, n, l, m);
                let v = v.expect("factorization has V");
                let (gu, gv) = nmf_gradient(inst, &u, &v);
                stack(&gu, &gv)
            }
        }
    }

    /// Euclidean projection onto the feasible set of the original problem.
    pub fn plain_projection(&self, x: &DVector<f64>) -> Result<DVector<f64>, SparsaError> {
        let Dims { n, l, m } = self.dims();
        match self {
            Instance::Recovery(inst) => {
                let u = DMatrix::from_column_slice(n, l, x.as_slice());
                Ok(DVector::from_column_slice(
                    project_frobenius_ball(&u, inst.b.sqrt()).as_slice(),
                ))
            }
            Instance::Nmf(inst) => {
                let Factors { u, v } = split_uv(x, n, l, m);
                let u = u.map(|e| e.max(0.0));
                let v = v.expect("factorization has V");
                let v = match inst.family {
                    Family::NmfSimplex => project_column_simplex(&v),
                    _ => project_sphere_nonneg(&v, (m as f64).sqrt())?,
                };
                Ok(stack(&u, &v))
            }
        }
    }

    /// Writes the instance as a text bundle: a header line
    /// `family,n,l,m,seed`, then for each matrix a line `name,rows,cols`
    /// followed by its rows as comma-separated values.
    pub fn write_bundle<W: Write>(&self, mut w: W) -> Result<(), ExperimentError> {
        let Dims { n, l, m } = self.dims();
        writeln!(w, "{},{},{},{},{}", self.family(), n, l, m, self.seed())?;
        let mut block = |name: &str, mat: &DMatrix<f64>| -> io::Result<()> {
            writeln!(w, "{name},{},{}", mat.nrows(), mat.ncols())?;
            for row in mat.row_iter() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", cells.join(","))?;
            }
            Ok(())
        };
        match self {
            Instance::Recovery(inst) => {
                block("A", &inst.a)?;
                block("y", &DMatrix::from_column_slice(inst.y.len(), 1, inst.y.as_slice()))?;
                block("b", &DMatrix::from_element(1, 1, inst.b))?;
                block("U_tilde", &inst.u_tilde)?;
            }
            Instance::Nmf(inst) => {
                block("X", &inst.x)?;
                block("U_star", &inst.u_star)?;
                block("V_star", &inst.v_star)?;
                block("gamma", &DMatrix::from_element(1, 1, inst.gamma))?;
            }
        }
        Ok(())
    }

    /// Reads a bundle written by [`Instance::write_bundle`].
    pub fn read_bundle<R: BufRead>(r: R) -> Result<Self, ExperimentError> {
        let bad = |msg: &str| ExperimentError::Bundle(msg.to_string());
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty bundle"))??;
        let fields: Vec<&str> = header.split(',').collect();
        if fields.len() != 5 {
            return Err(bad("header must be family,n,l,m,seed"));
        }
        let family: Family = fields[0].parse().map_err(|e: String| ExperimentError::Bundle(e))?;
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad("non-numeric header field"));
        let dims = Dims {
            n: num(fields[1])? as usize,
            l: num(fields[2])? as usize,
            m: num(fields[3])? as usize,
        };
        let seed = num(fields[4])?;

        let mut blocks = std::collections::BTreeMap::new();
        while let Some(line) = lines.next() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(bad("matrix header must be name,rows,cols"));
            }
            let rows = num(parts[1])? as usize;
            let cols = num(parts[2])? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let row = lines.next().ok_or_else(|| bad("truncated matrix"))??;
                for cell in row.split(',') {
                    data.push(cell.trim().parse::<f64>().map_err(|_| bad("non-numeric matrix entry"))?);
                }
            }
            if data.len() != rows * cols {
                return Err(bad("ragged matrix"));
            }
            blocks.insert(parts[0].to_string(), DMatrix::from_row_slice(rows, cols, &data));
        }
        let mut take = |name: &str| blocks.remove(name).ok_or_else(|| bad(&format!("missing block {name}")));
        Ok(match family {
            Family::Recovery => {
                let u_tilde = take("U_tilde")?;
                Instance::Recovery(Arc::new(RecoveryInstance {
                    dims,
                    a: take("A")?,
                    y: take("y")?.column(0).into_owned(),
                    b: take("b")?[(0, 0)],
                    ground_truth: &u_tilde * u_tilde.transpose(),
                    u_tilde,
                    seed,
                }))
            }
            _ => {
                let u_star = take("U_star")?;
                let v_star = take("V_star")?;
                Instance::Nmf(Arc::new(NmfInstance {
                    family,
                    dims,
                    x: take("X")?,
                    gamma: take("gamma")?[(0, 0)],
                    ground_truth: &u_star * &v_star,
                    u_star,
                    v_star,
                    seed,
                }))
            }
        })
    }
}

fn expect_len(expected: usize, got: usize) -> Result<(), ExperimentError> {
    if expected == got {
        Ok(())
    } else {
        Err(ExperimentError::VectorLength { expected, got })
    }
}

fn split_uv(x: &DVector<f64>, n: usize, l: usize, m: usize) -> Factors {
    let s = x.as_slice();
    Factors {
        u: DMatrix::from_column_slice(n, l, &s[..n * l]),
        v: Some(DMatrix::from_column_slice(l, m, &s[n * l..n * l + l * m])),
    }
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// `A vec(Z)`.
fn sense(inst: &RecoveryInstance, z: &DMatrix<f64>) -> DVector<f64> {
    &inst.a * DVector::from_column_slice(z.as_slice())
}

/// `mat(Aᵀw) + mat(Aᵀw)ᵀ`.
fn adjoint_sym(inst: &RecoveryInstance, w: &DVector<f64>) -> DMatrix<f64> {
    let n = inst.dims.n;
    let s = DMatrix::from_column_slice(n, n, inst.a.tr_mul(w).as_slice());
    &s + s.transpose()
}

fn recovery_residual(inst: &RecoveryInstance, u: &DMatrix<f64>) -> DVector<f64> {
    sense(inst, &(u * u.transpose())) - &inst.y
}

fn recovery_value(inst: &RecoveryInstance, u: &DMatrix<f64>) -> f64 {
    0.5 * recovery_residual(inst, u).norm_squared()
}

/// `S + Sᵀ` with `S = mat(Aᵀr)`, so that `∇_U f = (S + Sᵀ)U`.
fn recovery_sym_residual(inst: &RecoveryInstance, u: &DMatrix<f64>) -> DMatrix<f64> {
    adjoint_sym(inst, &recovery_residual(inst, u))
}

fn nmf_value(inst: &NmfInstance, u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    0.5 * (u * v - &inst.x).norm_squared() + inst.gamma * (u.norm_squared() + v.norm_squared())
}

fn nmf_gradient(inst: &NmfInstance, u: &DMatrix<f64>, v: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = u * v - &inst.x;
    let gu = &r * v.transpose() + 2.0 * inst.gamma * u;
    let gv = u.tr_mul(&r) + 2.0 * inst.gamma * v;
    (gu, gv)
}

/// Recovery as a conic program over `(U, s)`: free `U`, `s ≥ 0`,
/// `‖U‖²_F + s = b`.
pub struct RecoveryModel {
    inst: Arc<RecoveryInstance>,
    domain: BarrierDomain,
}

pub fn bind_recovery(inst: Arc<RecoveryInstance>) -> RecoveryModel {
    let Dims { n, l, .. } = inst.dims;
    RecoveryModel {
        domain: BarrierDomain::orthant(VarLayout::new(n * l, 1)),
        inst,
    }
}

impl RecoveryModel {
    fn u_of(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let Dims { n, l, .. } = self.inst.dims;
        DMatrix::from_column_slice(n, l, &x.as_slice()[..n * l])
    }

    fn pack(&self, u: &DMatrix<f64>, s: f64) -> DVector<f64> {
        let mut out = DVector::zeros(u.len() + 1);
        out.rows_mut(0, u.len()).copy_from_slice(u.as_slice());
        out[u.len()] = s;
        out
    }

    /// `∇²f(U)[V] = (S+Sᵀ)V + (Ṡ+Ṡᵀ)U` given the cached `S+Sᵀ`.
    fn hvp_with(&self, sym: &DMatrix<f64>, u: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
        let dv = self.u_of(v);
        let uv = u * dv.transpose();
        let dsym = adjoint_sym(&self.inst, &sense(&self.inst, &(&uv + uv.transpose())));
        self.pack(&(sym * &dv + dsym * u), 0.0)
    }
}

impl ConicModel for RecoveryModel {
    fn domain(&self) -> &BarrierDomain {
        &self.domain
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        recovery_value(&self.inst, &self.u_of(x))
    }

    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let u = self.u_of(x);
        self.pack(&(recovery_sym_residual(&self.inst, &u) * &u), 0.0)
    }

    fn objective_hvp(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let u = self.u_of(x);
        self.hvp_with(&recovery_sym_residual(&self.inst, &u), &u, v)
    }

    fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        let nl = x.len() - 1;
        let uu = x.rows(0, nl).norm_squared();
        DVector::from_element(1, uu + x[nl] - self.inst.b)
    }

    fn jacobian_apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let nl = x.len() - 1;
        DVector::from_element(1, 2.0 * x.rows(0, nl).dot(&v.rows(0, nl)) + v[nl])
    }

    fn jacobian_transpose_apply(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut out = 2.0 * w[0] * x;
        let nl = x.len() - 1;
        out[nl] = w[0];
        out
    }

    fn constraint_hvp(&self, x: &DVector<f64>, w: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = 2.0 * w[0] * v;
        out[x.len() - 1] = 0.0;
        out
    }

    fn lagrangian_hessian_at<'a>(&'a self, x: &DVector<f64>, w: &DVector<f64>) -> HessianOperator<'a> {
        let u = self.u_of(x);
        let sym = recovery_sym_residual(&self.inst, &u);
        let w0 = w[0];
        Box::new(move |v| {
            let mut out = self.hvp_with(&sym, &u, v);
            let nl = v.len() - 1;
            out.rows_mut(0, nl).axpy(2.0 * w0, &v.rows(0, nl), 1.0);
            out
        })
    }

    fn jacobian_dense(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let row = self.jacobian_transpose_apply(x, &DVector::from_element(1, 1.0));
        DMatrix::from_row_slice(1, row.len(), row.as_slice())
    }
}

/// Factorization as a conic program over `(U, V) ≥ 0` with simplex or
/// sphere equalities on `V`.
pub struct NmfModel {
    inst: Arc<NmfInstance>,
    domain: BarrierDomain,
}

pub fn bind_nmf(inst: Arc<NmfInstance>) -> NmfModel {
    let Dims { n, l, m } = inst.dims;
    NmfModel {
        domain: BarrierDomain::orthant(VarLayout::conic_only(n * l + l * m)),
        inst,
    }
}

impl NmfModel {
    fn split(&self, x: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let Dims { n, l, m } = self.inst.dims;
        let f = split_uv(x, n, l, m);
        (f.u, f.v.expect("factorization has V"))
    }

    fn v_offset(&self) -> usize {
        self.inst.dims.n * self.inst.dims.l
    }

    fn simplex(&self) -> bool {
        self.inst.family == Family::NmfSimplex
    }
}

impl ConicModel for NmfModel {
    fn domain(&self) -> &BarrierDomain {
        &self.domain
    }

    fn num_constraints(&self) -> usize {
        if self.simplex() {
            self.inst.dims.m
        } else {
            1
        }
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        let (u, v) = self.split(x);
        nmf_value(&self.inst, &u, &v)
    }

    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (u, v) = self.split(x);
        let (gu, gv) = nmf_gradient(&self.inst, &u, &v);
        stack(&gu, &gv)
    }

    fn objective_hvp(&self, x: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let (u, v) = self.split(x);
        let (du, dv) = self.split(d);
        let r = &u * &v - &self.inst.x;
        let dr = &du * &v + &u * &dv;
        let g2 = 2.0 * self.inst.gamma;
        let hu = &dr * v.transpose() + &r * dv.transpose() + g2 * &du;
        let hv = u.tr_mul(&dr) + du.tr_mul(&r) + g2 * &dv;
        stack(&hu, &hv)
    }

    fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        let (_, v) = self.split(x);
        if self.simplex() {
            v.row_sum().transpose().add_scalar(-1.0)
        } else {
            DVector::from_element(1, v.norm_squared() - self.inst.dims.m as f64)
        }
    }

    fn jacobian_apply(&self, x: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let off = self.v_offset();
        let dv = &d.as_slice()[off..];
        if self.simplex() {
            DVector::from_iterator(self.inst.dims.m, dv.chunks(self.inst.dims.l).map(|c| c.iter().sum()))
        } else {
            let v = &x.as_slice()[off..];
            DVector::from_element(1, 2.0 * v.iter().zip(dv).map(|(a, b)| a * b).sum::<f64>())
        }
    }

    fn jacobian_transpose_apply(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let off = self.v_offset();
        let mut out = DVector::zeros(x.len());
        if self.simplex() {
            let l = self.inst.dims.l;
            for (j, &wj) in w.iter().enumerate() {
                out.rows_mut(off + j * l, l).fill(wj);
            }
        } else {
            let len = x.len() - off;
            out.rows_mut(off, len).copy_from(&(2.0 * w[0] * x.rows(off, len)));
        }
        out
    }

    fn constraint_hvp(&self, x: &DVector<f64>, w: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        if !self.simplex() {
            let off = self.v_offset();
            let len = x.len() - off;
            out.rows_mut(off, len).copy_from(&(2.0 * w[0] * d.rows(off, len)));
        }
        out
    }

    fn lagrangian_hessian_at<'a>(&'a self, x: &DVector<f64>, w: &DVector<f64>) -> HessianOperator<'a> {
        let Dims { n, l, m } = self.inst.dims;
        let nl = n * l;
        let (u, v) = self.split(x);
        let r = &u * &v - &self.inst.x;
        let vt = v.transpose();
        let g2 = 2.0 * self.inst.gamma;
        let sphere_weight = if self.simplex() { 0.0 } else { 2.0 * w[0] };
        Box::new(move |d| {
            let du = DMatrixView::from_slice(&d.as_slice()[..nl], n, l);
            let dv = DMatrixView::from_slice(&d.as_slice()[nl..], l, m);
            let mut dr = du * &v;
            dr.gemm(1.0, &u, &dv, 1.0);
            let mut out = d * g2;
            let (head, tail) = out.as_mut_slice().split_at_mut(nl);
            let mut hu = DMatrixViewMut::from_slice(head, n, l);
            hu.gemm(1.0, &dr, &vt, 1.0);
            hu.gemm(1.0, &r, &dv.transpose(), 1.0);
            let mut hv = DMatrixViewMut::from_slice(tail, l, m);
            hv.gemm_tr(1.0, &u, &dr, 1.0);
            hv.gemm_tr(1.0, &du, &r, 1.0);
            hv += dv * sphere_weight;
            out
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::verify_derivatives;

    #[test]
    fn generation_is_deterministic() {
        let d = Dims::new(5, 2, 8);
        assert_eq!(gen_recovery(d, 3), gen_recovery(d, 3));
        assert_ne!(gen_recovery(d, 3).a, gen_recovery(d, 4).a);
        assert_eq!(gen_nmf(Family::NmfSphere, d, 9), gen_nmf(Family::NmfSphere, d, 9));
    }

    #[test]
    fn simplex_ground_truth_columns_sum_to_one() {
        let inst = gen_nmf(Family::NmfSimplex, Dims::new(6, 3, 7), 1);
        for s in inst.v_star.row_sum().iter() {
            assert!((s - 1.0).abs() <= 1e-12);
        }
        assert!(inst.v_star.iter().all(|&v| v >= 0.0));
        assert!(inst.u_star.iter().all(|&u| (0.0..=2.0).contains(&u)));
    }

    #[test]
    fn sphere_ground_truth_has_norm_sqrt_m() {
        let inst = gen_nmf(Family::NmfSphere, Dims::new(6, 3, 7), 1);
        assert!((inst.v_star.norm_squared() - 7.0).abs() <= 1e-10);
    }

    #[test]
    fn recovery_objective_at_zero_is_half_observation_norm() {
        let inst = Arc::new(gen_recovery(Dims::new(4, 2, 6), 2));
        let model = bind_recovery(inst.clone());
        let x = DVector::zeros(9);
        assert!((model.objective(&x) - 0.5 * inst.y.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn anchors_are_exactly_feasible_and_interior() {
        for family in Family::ALL {
            let inst = Instance::generate(family, Dims::new(5, 2, 4), 11);
            let model = inst.model();
            let z = inst.anchor();
            assert!(model.domain().is_interior(&z));
            assert!(model.constraints(&z).norm() <= 1e-12, "{family}");
            assert!(model.domain().is_interior(&inst.initial_point()));
        }
    }

    #[test]
    fn sphere_jacobian_is_twice_v() {
        let inst = Instance::generate(Family::NmfSphere, Dims::new(3, 2, 2), 5);
        let model = inst.model();
        let x = DVector::from_fn(10, |i, _| 0.1 + 0.05 * i as f64);
        let jt = model.jacobian_transpose_apply(&x, &DVector::from_element(1, 1.0));
        assert!(jt.rows(0, 6).iter().all(|&e| e == 0.0));
        assert_eq!(jt.rows(6, 4).into_owned(), 2.0 * x.rows(6, 4));
    }

    #[test]
    fn model_derivatives_pass_the_probe() {
        for family in Family::ALL {
            let inst = Instance::generate(family, Dims::new(5, 2, 8), 7);
            let model = inst.model();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let x = inst.anchor().map(|e| e * rng.random_range(0.5..1.5));
            verify_derivatives(model.as_ref(), &x, 5, 3).unwrap();
        }
    }

    #[test]
    fn cached_hessian_matches_componentwise_products() {
        for family in Family::ALL {
            let inst = Instance::generate(family, Dims::new(4, 2, 3), 3);
            let model = inst.model();
            let x = inst.anchor().map(|e| 1.3 * e);
            let w = DVector::from_fn(model.num_constraints(), |i, _| 0.7 - 0.3 * i as f64);
            let d = DVector::from_fn(x.len(), |i, _| (i as f64 * 0.37).sin());
            let cached = model.lagrangian_hessian_at(&x, &w)(&d);
            let direct = model.objective_hvp(&x, &d) + model.constraint_hvp(&x, &w, &d);
            assert!((cached - direct).norm() < 1e-10, "{family}");
        }
    }

    #[test]
    fn relative_error_examples() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(relative_error(&g, &g).unwrap(), 0.0);
        assert!((relative_error(&(2.0 * &g), &g).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            relative_error(&g, &DMatrix::zeros(2, 2)),
            Err(ExperimentError::ZeroGroundTruth)
        ));
    }

    #[test]
    fn feasibility_projection_examples() {
        let rec = Instance::generate(Family::Recovery, Dims::new(3, 1, 4), 1);
        let b = match &rec {
            Instance::Recovery(i) => i.b,
            _ => unreachable!(),
        };
        let inside = Factors {
            u: DMatrix::from_element(3, 1, (b / 6.0).sqrt()),
            v: None,
        };
        assert_eq!(rec.feasibility_projection(&inside).unwrap(), inside);

        let simplex = Instance::generate(Family::NmfSimplex, Dims::new(2, 2, 2), 1);
        let f = Factors {
            u: DMatrix::from_element(2, 2, 1.0),
            v: Some(DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 1.0, 0.25])),
        };
        let p = simplex.feasibility_projection(&f).unwrap();
        // Column sums (2, 0.5) → D = diag(0.5, 2).
        assert_eq!(p.v.unwrap(), DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]));

        let sphere = Instance::generate(Family::NmfSphere, Dims::new(2, 2, 4), 1);
        let v = DMatrix::from_element(2, 4, 1.0) * 2.0 * (4.0f64).sqrt() / (8.0f64).sqrt();
        let p = sphere
            .feasibility_projection(&Factors {
                u: DMatrix::from_element(2, 2, 1.0),
                v: Some(v.clone()),
            })
            .unwrap();
        assert!((p.v.unwrap() - 0.5 * v).norm() < 1e-14);
    }

    #[test]
    fn bundle_roundtrip_preserves_instances() {
        for family in Family::ALL {
            let inst = Instance::generate(family, Dims::new(3, 2, 4), 21);
            let mut buf = Vec::new();
            inst.write_bundle(&mut buf).unwrap();
            let back = Instance::read_bundle(buf.as_slice()).unwrap();
            assert_eq!(back, inst, "{family}");
        }
    }

    #[test]
    fn dims_parse_and_display() {
        let d: Dims = "20x2x10".parse().unwrap();
        assert_eq!(d, Dims::new(20, 2, 10));
        assert_eq!(d.to_string(), "20x2x10");
        assert!("20x2".parse::<Dims>().is_err());
        assert!("0x2x3".parse::<Dims>().is_err());
    }

    #[test]
    fn small_grid_keeps_rows_up_to_forty() {
        assert_eq!(small_grid(Family::Recovery).len(), 4);
        assert_eq!(small_grid(Family::NmfSimplex).len(), 9);
        assert_eq!(small_grid(Family::NmfSphere).len(), 12);
    }
}
