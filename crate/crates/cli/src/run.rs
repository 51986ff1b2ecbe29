//! Grid execution and artifact emission.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use ncgal::driver::DriverEvent;
use ncgal::experiments::instance_seed;
use ncgal::sparsa::sparsa_solve_observed;
use ncgal::{check_sosp, solve_observed, Dims, DriverConfig, Family, Instance, OracleMode, SparsaConfig};
use rayon::prelude::*;
use thiserror::Error;

use crate::spec::{OracleChoice, RunSpec, Solver};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot write artifacts: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// One `(iteration, objective, feasibility)` sample of a solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
    pub feasibility: f64,
}

/// Metrics of a finished solve, measured after the feasibility projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub relative_error: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Constraint residual of the raw solver output.
    pub feasibility: f64,
    pub dual_norm: Option<f64>,
    pub cone_violation: Option<f64>,
    pub second_order: Option<f64>,
    /// SpaRSA's stopping residual.
    pub stationarity: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct InstanceOutcome {
    pub family: Family,
    pub dims: Dims,
    pub solver: Solver,
    pub seed: u64,
    pub result: Result<Metrics, String>,
    pub wall: Duration,
    pub trace: Vec<TracePoint>,
    /// Terminal `(x, λ̃)` of the barrier method.
    pub terminal: Option<(DVector<f64>, DVector<f64>)>,
}

/// Aggregate of one `(family, dims, solver)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub family: Family,
    pub dims: Dims,
    pub solver: Solver,
    pub instances: usize,
    pub failures: usize,
    pub mean_relative_error: f64,
    pub mean_objective: f64,
    pub mean_iterations: f64,
    pub mean_wall_seconds: f64,
    pub pass_rate: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub outcomes: Vec<InstanceOutcome>,
    pub rows: Vec<ResultRow>,
}

pub fn cell_name(family: Family, dims: Dims) -> String {
    format!("{family}_{dims}")
}

fn driver_config(spec: &RunSpec, seed: u64) -> DriverConfig {
    let mut cfg = DriverConfig::new(spec.eps);
    // The harness certifies at (eps, eps2) itself.
    cfg.certify_second_order = false;
    cfg.oracle = match spec.oracle {
        OracleChoice::Det => OracleMode::Deterministic,
        OracleChoice::Rand => OracleMode::Randomized { seed },
    };
    cfg
}

fn run_barrier(inst: &Instance, spec: &RunSpec, trace: &mut Vec<TracePoint>) -> Result<(Metrics, DVector<f64>, DVector<f64>), String> {
    let model = inst.model();
    let model = model.as_ref();
    let x0 = inst.interior(model, inst.initial_point());
    let anchor = inst.interior(model, inst.anchor());
    let sample = |iteration: usize, x: &DVector<f64>| TracePoint {
        iteration,
        objective: model.objective(x),
        feasibility: model.constraints(x).norm(),
    };
    trace.push(sample(0, x0.as_vector()));
    let mut count = 0;
    let report = solve_observed(model, &x0, &anchor, &driver_config(spec, inst.seed()), &mut |event| {
        if let DriverEvent::Inner { x, .. } = event {
            count += 1;
            trace.push(sample(count, x));
        }
    })
    .map_err(|e| e.to_string())?;

    let x = report.x.as_vector();
    let cert = check_sosp(model, x, &report.lambda_tilde, spec.eps, spec.eps2).map_err(|e| e.to_string())?;
    let factors = inst.factors_from_model_vector(x).map_err(|e| e.to_string())?;
    let projected = inst.feasibility_projection(&factors).map_err(|e| e.to_string())?;
    let metrics = Metrics {
        relative_error: inst.relative_error(&projected).map_err(|e| e.to_string())?,
        objective: inst.objective(&projected),
        iterations: report.inner_iterations,
        feasibility: cert.feasibility,
        dual_norm: Some(cert.dual_norm),
        cone_violation: Some(cert.cone.worst_violation),
        second_order: cert.second_order,
        stationarity: None,
        pass: cert.passes(),
    };
    Ok((metrics, x.clone(), report.lambda_tilde))
}

fn run_sparsa(inst: &Instance, trace: &mut Vec<TracePoint>) -> Result<Metrics, String> {
    let x0 = inst.plain_initial_point();
    let feasibility = |x: &DVector<f64>| {
        inst.factors_from_plain_vector(x)
            .map(|f| inst.feasibility(&f))
            .unwrap_or(f64::NAN)
    };
    trace.push(TracePoint {
        iteration: 0,
        objective: inst.plain_value(&x0),
        feasibility: feasibility(&x0),
    });
    let out = sparsa_solve_observed(
        |x| inst.plain_value(x),
        |x| inst.plain_gradient(x),
        |x| inst.plain_projection(x),
        &x0,
        &SparsaConfig::default(),
        &mut |record, x| {
            trace.push(TracePoint {
                iteration: record.iteration,
                objective: record.objective,
                feasibility: feasibility(x),
            })
        },
    )
    .map_err(|e| e.to_string())?;
    let factors = inst.factors_from_plain_vector(&out.x).map_err(|e| e.to_string())?;
    let raw_feasibility = inst.feasibility(&factors);
    let projected = inst.feasibility_projection(&factors).map_err(|e| e.to_string())?;
    Ok(Metrics {
        relative_error: inst.relative_error(&projected).map_err(|e| e.to_string())?,
        objective: inst.objective(&projected),
        iterations: out.iterations,
        feasibility: raw_feasibility,
        dual_norm: None,
        cone_violation: None,
        second_order: None,
        stationarity: Some(out.residual),
        pass: out.converged,
    })
}

/// Solves one instance with one solver. Failures are captured in the outcome.
pub fn run_instance(spec: &RunSpec, family: Family, dims: Dims, solver: Solver, seed: u64) -> InstanceOutcome {
    let inst = Instance::generate(family, dims, seed);
    let start = Instant::now();
    let mut trace = Vec::new();
    let mut terminal = None;
    let result = match solver {
        Solver::BarrierAl => run_barrier(&inst, spec, &mut trace).map(|(m, x, lambda)| {
            terminal = Some((x, lambda));
            m
        }),
        Solver::Sparsa => run_sparsa(&inst, &mut trace),
    };
    InstanceOutcome {
        family,
        dims,
        solver,
        seed,
        result,
        wall: start.elapsed(),
        trace,
        terminal,
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Averages outcomes per `(family, dims, solver)`, keeping first-seen order.
pub fn aggregate(outcomes: &[InstanceOutcome]) -> Vec<ResultRow> {
    let mut keys: Vec<(Family, Dims, Solver)> = Vec::new();
    for o in outcomes {
        let key = (o.family, o.dims, o.solver);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(family, dims, solver)| {
            let group: Vec<&InstanceOutcome> = outcomes
                .iter()
                .filter(|o| (o.family, o.dims, o.solver) == (family, dims, solver))
                .collect();
            let ok: Vec<&Metrics> = group.iter().filter_map(|o| o.result.as_ref().ok()).collect();
            let passes = ok.iter().filter(|m| m.pass).count();
            ResultRow {
                family,
                dims,
                solver,
                instances: group.len(),
                failures: group.len() - ok.len(),
                mean_relative_error: mean(ok.iter().map(|m| m.relative_error)),
                mean_objective: mean(ok.iter().map(|m| m.objective)),
                mean_iterations: mean(ok.iter().map(|m| m.iterations as f64)),
                mean_wall_seconds: mean(group.iter().map(|o| o.wall.as_secs_f64())),
                pass_rate: passes as f64 / group.len() as f64,
            }
        })
        .collect()
}

/// Executes the grid on a worker pool and returns outcomes in spec order.
pub fn execute(spec: &RunSpec) -> Result<RunOutput, RunError> {
    let mut jobs = Vec::new();
    for (family, dims) in spec.cells() {
        for i in 0..spec.instances {
            for &solver in &spec.solvers {
                jobs.push((family, dims, solver, instance_seed(spec.seed, i)));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(spec.workers).build()?;
    let outcomes: Vec<InstanceOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(family, dims, solver, seed)| run_instance(spec, family, dims, solver, seed))
            .collect()
    });
    let rows = aggregate(&outcomes);
    Ok(RunOutput { outcomes, rows })
}

/// Runs the grid and writes every artifact under `spec.out`.
pub fn run(spec: &RunSpec) -> Result<RunOutput, RunError> {
    let output = execute(spec)?;
    write_artifacts(spec, &output)?;
    Ok(output)
}

fn fmt_float(v: f64) -> String {
    format!("{v:.6e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

pub const RESULTS_HEADER: [&str; 11] = [
    "family",
    "n",
    "l",
    "m",
    "solver",
    "instances",
    "failures",
    "mean_rel_error",
    "mean_objective",
    "mean_iterations",
    "pass_rate",
];

pub const INSTANCES_HEADER: [&str; 16] = [
    "family",
    "n",
    "l",
    "m",
    "solver",
    "seed",
    "status",
    "rel_error",
    "objective",
    "iterations",
    "feasibility",
    "dual_norm",
    "cone_violation",
    "second_order",
    "stationarity",
    "pass",
];

pub fn iterate_path(out: &Path, family: Family, dims: Dims, seed: u64) -> PathBuf {
    out.join("iterates").join(cell_name(family, dims)).join(format!("{seed}.csv"))
}

/// Writes `results.csv`, `instances.csv`, `timings.csv`, `summary.md`,
/// `run.cfg`, per-seed traces and terminal iterates.
pub fn write_artifacts(spec: &RunSpec, output: &RunOutput) -> Result<(), RunError> {
    let out = &spec.out;
    fs::create_dir_all(out)?;
    fs::write(out.join("run.cfg"), spec.to_config())?;

    let mut w = csv::Writer::from_path(out.join("results.csv"))?;
    w.write_record(RESULTS_HEADER)?;
    for r in &output.rows {
        w.write_record([
            r.family.to_string(),
            r.dims.n.to_string(),
            r.dims.l.to_string(),
            r.dims.m.to_string(),
            r.solver.to_string(),
            r.instances.to_string(),
            r.failures.to_string(),
            fmt_float(r.mean_relative_error),
            fmt_float(r.mean_objective),
            format!("{:.1}", r.mean_iterations),
            format!("{:.4}", r.pass_rate),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("instances.csv"))?;
    let mut timings = csv::Writer::from_path(out.join("timings.csv"))?;
    w.write_record(INSTANCES_HEADER)?;
    timings.write_record(["family", "n", "l", "m", "solver", "seed", "wall_seconds"])?;
    for o in &output.outcomes {
        let head = [
            o.family.to_string(),
            o.dims.n.to_string(),
            o.dims.l.to_string(),
            o.dims.m.to_string(),
            o.solver.to_string(),
            o.seed.to_string(),
        ];
        let tail: Vec<String> = match &o.result {
            Ok(m) => vec![
                "ok".into(),
                format!("{:e}", m.relative_error),
                format!("{:e}", m.objective),
                m.iterations.to_string(),
                format!("{:e}", m.feasibility),
                fmt_opt(m.dual_norm),
                fmt_opt(m.cone_violation),
                fmt_opt(m.second_order),
                fmt_opt(m.stationarity),
                m.pass.to_string(),
            ],
            Err(e) => {
                let mut v = vec![format!("error: {e}")];
                v.extend(std::iter::repeat_n(String::new(), 8));
                v.push("false".into());
                v
            }
        };
        w.write_record(head.iter().cloned().chain(tail))?;
        timings.write_record(head.into_iter().chain([format!("{:.6}", o.wall.as_secs_f64())]))?;
    }
    w.flush()?;
    timings.flush()?;

    write_traces(out, &output.outcomes)?;
    for o in &output.outcomes {
        if let Some((x, lambda)) = &o.terminal {
            write_iterate(&iterate_path(out, o.family, o.dims, o.seed), x, lambda)?;
        }
    }
    fs::write(out.join("summary.md"), summary(spec, &output.rows))?;
    Ok(())
}

fn write_traces(out: &Path, outcomes: &[InstanceOutcome]) -> Result<(), RunError> {
    let mut written: Vec<PathBuf> = Vec::new();
    for o in outcomes {
        let path = out
            .join("traces")
            .join(cell_name(o.family, o.dims))
            .join(format!("{}.csv", o.seed));
        if !written.contains(&path) {
            fs::create_dir_all(path.parent().expect("trace path has a parent"))?;
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["solver", "iteration", "objective", "feasibility"])?;
            for same in outcomes
                .iter()
                .filter(|p| (p.family, p.dims, p.seed) == (o.family, o.dims, o.seed))
            {
                for t in &same.trace {
                    w.write_record([
                        same.solver.to_string(),
                        t.iteration.to_string(),
                        format!("{:e}", t.objective),
                        format!("{:e}", t.feasibility),
                    ])?;
                }
            }
            w.flush()?;
            written.push(path);
        }
    }
    Ok(())
}

/// Stores `x` and `λ̃` as `kind,index,value` rows with round-trip formatting.
pub fn write_iterate(path: &Path, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<(), RunError> {
    fs::create_dir_all(path.parent().expect("iterate path has a parent"))?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kind", "index", "value"])?;
    for (kind, v) in [("x", x), ("lambda", lambda)] {
        for (i, e) in v.iter().enumerate() {
            w.write_record([kind.to_string(), i.to_string(), format!("{e:e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn summary(spec: &RunSpec, rows: &[ResultRow]) -> String {
    let mut s = String::new();
    s.push_str("# Benchmark summary\n\n");
    s.push_str(&format!(
        "{} instances per cell, base seed {}, eps = {:e}, eps2 = {:e}, oracle = {}.\n",
        spec.instances,
        spec.seed,
        spec.eps,
        spec.eps2,
        spec.oracle.name()
    ));
    s.push_str("Metrics are measured after projecting each output onto the feasible set.\n");
    for &family in &spec.families {
        let family_rows: Vec<&ResultRow> = rows.iter().filter(|r| r.family == family).collect();
        if family_rows.is_empty() {
            continue;
        }
        s.push_str(&format!(
            "\n## {family}\n\n| (n, l, m) | solver | rel. error | objective | iterations | pass rate | wall (s) |\n|---|---|---|---|---|---|---|\n"
        ));
        for r in family_rows {
            s.push_str(&format!(
                "| ({}, {}, {}) | {} | {:.2e} | {:.2e} | {:.0} | {:.2} | {:.2} |\n",
                r.dims.n,
                r.dims.l,
                r.dims.m,
                r.solver,
                r.mean_relative_error,
                r.mean_objective,
                r.mean_iterations,
                r.pass_rate,
                r.mean_wall_seconds
            ));
        }
    }
    s
}

/// Convenience for callers printing progress.
pub fn describe(output: &RunOutput, mut w: impl Write) -> io::Result<()> {
    for r in &output.rows {
        writeln!(
            w,
            "{:<12} {:<10} {:<10} rel_err {:.3e}  obj {:.3e}  pass {:.2}  failures {}",
            r.family.name(),
            r.dims.to_string(),
            r.solver.name(),
            r.mean_relative_error,
            r.mean_objective,
            r.pass_rate,
            r.failures
        )?;
    }
    Ok(())
}
