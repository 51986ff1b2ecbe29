//! Barrier-weight schedule against a direct evaluation of its definition.

use ncgal::driver::mu_floor;
use ncgal::{k_epsilon, mu_schedule};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct evaluation: `ω = r^{ln ε / ln 2}` computed with `powf`, and the
/// index `K` found by scanning for the first `k` with `r^k ≥ 2`.
fn reference(eps: f64, r: f64, theta: f64, k: usize) -> (usize, f64) {
    let big_k = (0..).find(|&j| r.powi(j as i32) >= 2.0).unwrap();
    let omega = r.powf(eps.ln() / 2f64.ln());
    let scale = 2.0 * theta.sqrt() + 2.0;
    let mu = if k >= big_k { eps / scale } else { eps.max(omega.powi(k as i32)) / scale };
    (big_k, mu)
}

#[test]
fn fifty_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let eps = 10f64.powf(rng.random_range(-8.0..-0.1));
        let r = rng.random_range(1.01..4.0);
        let theta = rng.random_range(1.0..5000.0);
        let (big_k, _) = reference(eps, r, theta, 0);
        // Exact equality except when ln2/ln r sits on an integer boundary.
        let exact = (2f64.ln() / r.ln()).ceil() as usize;
        assert_eq!(k_epsilon(r), exact);
        if (r.powi(exact as i32) - 2.0).abs() > 1e-9 {
            assert_eq!(k_epsilon(r), big_k, "r = {r}");
        }
        for k in 0..(big_k + 3) {
            let got = mu_schedule(eps, r, theta, k);
            let (_, want) = reference(eps, r, theta, k);
            assert!((got - want).abs() <= 1e-12 * want, "ε = {eps}, r = {r}, ϑ = {theta}, k = {k}");
        }
    }
}

#[test]
fn default_parameters() {
    assert_eq!(k_epsilon(1.5), 2);
    assert!((mu_schedule(1e-4, 1.5, 1.0, 2) - 2.5e-5).abs() < 1e-18);
    assert_eq!(mu_schedule(1e-4, 1.5, 1.0, 0), 0.25);
}

proptest! {
    #[test]
    fn schedule_is_nonincreasing_and_floored(
        eps in 1e-8f64..0.9,
        r in 1.01f64..4.0,
        theta in 1.0f64..1e4,
    ) {
        let floor = mu_floor(eps, theta);
        let mut prev = f64::INFINITY;
        for k in 0..(k_epsilon(r) + 5) {
            let mu = mu_schedule(eps, r, theta, k);
            prop_assert!(mu <= prev * (1.0 + 1e-12));
            prop_assert!(mu >= floor * (1.0 - 1e-12));
            prev = mu;
        }
        prop_assert_eq!(mu_schedule(eps, r, theta, k_epsilon(r)), floor);
    }
}
