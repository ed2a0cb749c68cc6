#![allow(dead_code)]

use fairpol::{Matrix, Mlp, Mode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

/// Analytic and numeric derivatives agree within relative `rel`, or within
/// an absolute `1e-7` floor.
pub fn agree(analytic: f64, numeric: f64, rel: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-7 || diff / analytic.abs().max(numeric.abs()) <= rel
}

/// Central difference of `f` with respect to each coordinate of `x`.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + H;
            let up = f(&p);
            p[i] = orig - H;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Largest failing index, if any, comparing two gradient vectors.
pub fn first_mismatch(analytic: &[f64], numeric: &[f64], rel: f64) -> Option<(usize, f64, f64)> {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .find(|(_, (a, n))| !agree(**a, **n, rel))
        .map(|(i, (a, n))| (i, *a, *n))
}

/// Train-mode forward with a fixed dropout stream, so repeated calls share
/// one mask.
pub fn forward_fixed(net: &mut Mlp, x: &Matrix, mask_seed: u64) -> Matrix {
    let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
    net.forward(x, Mode::Train, &mut r).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    use rand::Rng;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Checks every parameter gradient of `net` for the loss `loss(output)` whose
/// output-gradient is `grad`.
pub fn check_network(
    net: &Mlp,
    x: &Matrix,
    mask_seed: u64,
    loss: &dyn Fn(&Matrix) -> f64,
    grad: &dyn Fn(&Matrix) -> Matrix,
    rel: f64,
) -> Option<(usize, f64, f64)> {
    let mut n = net.clone();
    let out = forward_fixed(&mut n, x, mask_seed);
    let analytic = n.backward(&grad(&out)).unwrap().params;
    let numeric = central_diff(net.params(), |p| {
        let mut m = net.clone();
        m.params_mut().copy_from_slice(p);
        loss(&forward_fixed(&mut m, x, mask_seed))
    });
    first_mismatch(&analytic, &numeric, rel)
}
