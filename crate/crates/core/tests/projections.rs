//! Euclidean projections used by SpaRSA and the experiment metrics.

use nalgebra::{DMatrix, DVector};
use ncgal::experiments::small_grid;
use ncgal::sparsa::{project_column_simplex, project_frobenius_ball, project_simplex, project_sphere_nonneg};
use ncgal::{sparsa_solve, Family, Instance, SparsaConfig};
use proptest::prelude::*;

type Projection = Box<dyn Fn(&DMatrix<f64>) -> Option<DMatrix<f64>>>;

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

/// Simplex projection by bisection on the threshold `τ` solving
/// `Σ max(vᵢ - τ, 0) = 1`, independent of the sort-based routine.
fn simplex_by_bisection(v: &[f64]) -> Vec<f64> {
    let mass = |t: f64| v.iter().map(|&x| (x - t).max(0.0)).sum::<f64>();
    let mut lo = v.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    v.iter().map(|&x| (x - 0.5 * (lo + hi)).max(0.0)).collect()
}

proptest! {
    #[test]
    fn simplex_projection_matches_bisection(v in prop::collection::vec(-3.0f64..3.0, 1..20)) {
        let p = project_simplex(&v);
        let q = simplex_by_bisection(&v);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn projections_are_idempotent_and_nonexpansive(a in mat(4, 3), b in mat(4, 3), radius in 0.1f64..4.0) {
        let projections: Vec<Projection> = vec![
            Box::new(move |x| Some(project_frobenius_ball(x, radius))),
            Box::new(|x| Some(project_column_simplex(x))),
        ];
        for p in &projections {
            let (pa, pb) = (p(&a).unwrap(), p(&b).unwrap());
            prop_assert!((p(&pa).unwrap() - &pa).norm() <= 1e-12 * (1.0 + pa.norm()));
            prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() * (1.0 + 1e-12) + 1e-12);
        }
        // The sphere is not convex, so only idempotence and feasibility hold.
        if let Ok(pa) = project_sphere_nonneg(&a, radius) {
            prop_assert!((pa.norm() - radius).abs() <= 1e-12 * radius);
            prop_assert!(pa.iter().all(|&e| e >= 0.0));
            let again = project_sphere_nonneg(&pa, radius).unwrap();
            prop_assert!((again - &pa).norm() <= 1e-12 * radius);
        }
    }

    #[test]
    fn feasibility_projection_satisfies_constraints(seed in 0u64..50, noise in prop::collection::vec(-0.3f64..0.3, 200)) {
        for family in Family::ALL {
            let dims = small_grid(family)[0];
            let inst = Instance::generate(family, dims, seed);
            let x = inst.initial_point();
            let perturbed = DVector::from_fn(x.len(), |i, _| x[i] * (1.0 + noise[i % noise.len()]));
            let factors = inst.factors_from_model_vector(&perturbed).unwrap();
            let projected = inst.feasibility_projection(&factors).unwrap();
            prop_assert!(inst.feasibility(&projected) <= 1e-10 * dims.m as f64);
        }
    }
}

#[test]
fn sparsa_outputs_are_feasible() {
    for family in Family::ALL {
        let inst = Instance::generate(family, small_grid(family)[0], 3);
        let out = sparsa_solve(
            |x| inst.plain_value(x),
            |x| inst.plain_gradient(x),
            |x| inst.plain_projection(x),
            &inst.plain_initial_point(),
            &SparsaConfig::default(),
        )
        .unwrap();
        let again = inst.plain_projection(&out.x).unwrap();
        assert!((again - &out.x).norm() <= 1e-12 * (1.0 + out.x.norm()), "{family}");
        assert!(out.converged, "{family}");
    }
}

#[test]
fn sparsa_window_acceptance_on_a_recorded_trace() {
    // Every accepted value must lie below the max of the previous M + 1.
    let inst = Instance::generate(Family::Recovery, small_grid(Family::Recovery)[1], 0);
    let cfg = SparsaConfig::default();
    let x0 = inst.plain_initial_point();
    let out = sparsa_solve(
        |x| inst.plain_value(x),
        |x| inst.plain_gradient(x),
        |x| inst.plain_projection(x),
        &x0,
        &cfg,
    )
    .unwrap();
    let mut history = vec![inst.plain_value(&inst.plain_projection(&x0).unwrap())];
    for rec in &out.trace {
        let start = history.len().saturating_sub(cfg.window + 1);
        let reference = history[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(rec.objective <= reference, "iteration {}", rec.iteration);
        history.push(rec.objective);
    }
}
