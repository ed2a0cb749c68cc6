//! Shared fixtures for the criterion benchmarks.

use fairpol::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect())
        .expect("dimensions match")
}
