use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::DVector;
use ncgal::newton_cg::SubproblemObjective;
use ncgal::{
    capped_cg, min_eig_oracle, solve_subproblem, BarrierDomain, CappedCgConfig, HessianOperator, InteriorPoint,
    NewtonCgConfig, OracleConfig, OracleMode, SmoothObjective, VarLayout,
};
use ncgal_bench::{random_vector, recovery_instance, symmetric_with_spectrum};

fn capped_cg_bench(c: &mut Criterion) {
    let h = symmetric_with_spectrum(30, 0.1, 10.0, 1);
    let g = random_vector(30, 2);
    let cfg = CappedCgConfig::new(0.1, 0.5);
    c.bench_function("capped_cg/spd_30", |b| b.iter(|| capped_cg(|v| &h * v, &g, &cfg).unwrap()));
    let indefinite = symmetric_with_spectrum(30, -1.0, 10.0, 3);
    c.bench_function("capped_cg/indefinite_30", |b| {
        b.iter(|| capped_cg(|v| &indefinite * v, &g, &cfg).unwrap())
    });
}

fn oracle_bench(c: &mut Criterion) {
    let h = symmetric_with_spectrum(100, -0.02, 1.0, 4);
    let randomized = OracleConfig::randomized(0.01, 0.05, 7);
    c.bench_function("oracle/randomized_100", |b| {
        b.iter(|| min_eig_oracle(|v| &h * v, 100, &randomized).unwrap())
    });
    let deterministic = OracleConfig::deterministic(0.01);
    c.bench_function("oracle/deterministic_100", |b| {
        b.iter(|| min_eig_oracle(|v| &h * v, 100, &deterministic).unwrap())
    });
}

/// `½‖x - t‖²` with `t` partly outside the orthant.
struct Shifted(DVector<f64>);

impl SmoothObjective for Shifted {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x - &self.0).norm_squared()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        x - &self.0
    }
    fn hessian_at<'a>(&'a self, _x: &DVector<f64>) -> HessianOperator<'a> {
        Box::new(|v| v.clone())
    }
}

fn newton_cg_bench(c: &mut Criterion) {
    let n = 50;
    let smooth = Shifted(random_vector(n, 5));
    let domain = BarrierDomain::orthant(VarLayout::new(0, n));
    let obj = SubproblemObjective::new(&smooth, &domain, 1e-3);
    let x0 = InteriorPoint::new(&domain, DVector::from_element(n, 1.0)).unwrap();
    let mut cfg = NewtonCgConfig::new(1e-3, 1e-3f64.sqrt());
    cfg.oracle = OracleMode::Deterministic;
    c.bench_function("newton_cg/orthant_50", |b| {
        b.iter_batched(|| x0.clone(), |u| solve_subproblem(&obj, &u, &cfg).unwrap(), BatchSize::SmallInput)
    });
}

fn recovery_hvp_bench(c: &mut Criterion) {
    let inst = recovery_instance();
    let model = inst.model();
    let x = inst.initial_point();
    let v = random_vector(x.len(), 6);
    c.bench_function("recovery/objective_hvp_20x2x80", |b| b.iter(|| model.objective_hvp(&x, &v)));
    c.bench_function("recovery/gradient_20x2x80", |b| b.iter(|| model.objective_gradient(&x)));
}

criterion_group!(benches, capped_cg_bench, oracle_bench, newton_cg_bench, recovery_hvp_bench);
criterion_main!(benches);
