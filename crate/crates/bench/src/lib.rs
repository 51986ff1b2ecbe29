//! Seeded fixtures shared by the kernel benchmarks.

use nalgebra::{DMatrix, DVector};
use ncgal::{Family, Instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Symmetric `n × n` matrix `QᵀDQ` with eigenvalues spread over `[lo, hi]`.
pub fn symmetric_with_spectrum(n: usize, lo: f64, hi: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = raw.qr().q();
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| lo + step * i as f64));
    let h = &q * d * q.transpose();
    (&h + h.transpose()) * 0.5
}

pub fn random_vector(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// The recovery instance `(20, 2, 80)` with seed 0.
pub fn recovery_instance() -> Instance {
    Instance::generate(Family::Recovery, ncgal::Dims::new(20, 2, 80), 0)
}
