//! Minimum-eigenvalue oracle against planted spectra.

use nalgebra::{DMatrix, DVector};
use ncgal::eig_oracle::iteration_cap;
use ncgal::{min_eig_oracle, OracleConfig, OracleKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn planted(eigs: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = eigs.len();
    let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let h = &q * DMatrix::from_diagonal(&DVector::from_column_slice(eigs)) * q.transpose();
    (&h + h.transpose()) * 0.5
}

#[test]
fn deterministic_mode_matches_planted_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let eps = 0.05;
    for trial in 0..200 {
        let n = rng.random_range(2..=40);
        let mut eigs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
        // Keep a margin around the decision threshold so rounding cannot flip it.
        let lam = match trial % 3 {
            0 => -2.0 * eps,
            1 => -0.25 * eps,
            _ => rng.random_range(-1.0..0.5),
        };
        eigs[0] = lam;
        let lam_min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        if (lam_min + eps / 2.0).abs() < 1e-6 {
            continue;
        }
        let h = planted(&eigs, &mut rng);
        let out = min_eig_oracle(|v| &h * v, n, &OracleConfig::deterministic(eps)).unwrap();
        let expect_nc = lam_min <= -eps / 2.0;
        assert_eq!(out.kind == OracleKind::NegativeCurvature, expect_nc, "trial {trial}");
        assert!((out.min_ritz - lam_min).abs() <= 1e-10, "trial {trial}");
        if let Some(v) = &out.direction {
            let rayleigh = v.dot(&(&h * v)) / v.norm_squared();
            assert!((rayleigh - lam_min).abs() <= 1e-10);
            assert!((out.rayleigh.unwrap() - lam_min).abs() <= 1e-10);
            assert!((v.norm() - 1.0).abs() <= 1e-12);
        } else {
            assert!(lam_min >= -eps);
        }
    }
}

#[test]
fn randomized_mode_detects_planted_curvature() {
    let eps = 0.01;
    let n = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut eigs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    eigs[0] = -2.0 * eps;
    let h = planted(&eigs, &mut rng);
    let mut detected = 0;
    for seed in 0..500u64 {
        let out = min_eig_oracle(|v| &h * v, n, &OracleConfig::randomized(eps, 0.05, seed)).unwrap();
        if let Some(v) = &out.direction {
            assert!(v.dot(&(&h * v)) <= -eps / 2.0 + 1e-12);
            detected += 1;
        }
    }
    assert!(detected >= 475, "detected {detected}/500");
}

#[test]
fn certified_outcomes_are_never_wrong_on_psd_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..50 {
        let n = rng.random_range(5..60);
        let eigs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let h = planted(&eigs, &mut rng);
        let out = min_eig_oracle(|v| &h * v, n, &OracleConfig::randomized(0.01, 0.05, seed)).unwrap();
        assert_eq!(out.kind, OracleKind::Certified);
    }
}

fn cap_formula(n: usize, eps: f64, delta: f64, h: f64) -> usize {
    let steps = 1.0 + ((2.75 * n as f64 / (delta * delta)).ln() / 2.0 * (h / eps).sqrt()).ceil();
    (steps as usize).min(n)
}

#[test]
fn iteration_cap_matches_formula() {
    assert_eq!(iteration_cap(100, 0.01, 0.05, 1.0), 60);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..19 {
        let n = rng.random_range(10..100_000);
        let eps = 10f64.powf(rng.random_range(-4.0..-0.5));
        let delta = rng.random_range(0.01..0.5);
        let h = 10f64.powf(rng.random_range(-1.0..2.0));
        assert_eq!(iteration_cap(n, eps, delta, h), cap_formula(n, eps, delta, h));
    }
}
