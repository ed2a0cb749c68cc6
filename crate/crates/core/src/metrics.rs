//! Action-fairness metrics.

use rand::Rng;

use crate::data::SimConfig;
use crate::error::{Error, Result};
use crate::policy::PolicyFn;
use crate::rng::{self, tags};

/// Monte Carlo estimate of `E[pi(X_u, X_s^(1), 1) - pi(X_u, X_s^(0), 0)]` for
/// the simulator's feature layout `[x_u, x_s]`, sharing `X_u` between the two
/// arguments and drawing `X_s^(g) ~ U[g - 1, g]`.
pub fn action_fairness_gap_sim(policy: &dyn PolicyFn, sim: &SimConfig, n_mc: usize, seed: u64) -> Result<f64> {
    sim.validate()?;
    if n_mc == 0 {
        return Err(Error::Config("Monte Carlo sample count must be positive".into()));
    }
    let mut rng = rng::stream(seed, tags::MONTE_CARLO);
    let mut total = 0.0;
    for _ in 0..n_mc {
        let x_u = rng.random_range(-1.0..=1.0);
        let x1 = rng.random_range(0.0..=1.0);
        let x0 = rng.random_range(-1.0..=0.0);
        total += policy.prob(&[x_u, x1], 1) - policy.prob(&[x_u, x0], 0);
    }
    Ok(total / n_mc as f64)
}

/// Largest change in policy output when only the group changes, over the
/// given covariate rows.
pub fn group_sensitivity<'a>(
    policy: &dyn PolicyFn,
    rows: impl IntoIterator<Item = &'a [f64]>,
    groups: usize,
) -> f64 {
    rows.into_iter()
        .map(|x| {
            let out: Vec<f64> = (0..groups).map(|g| policy.prob(x, g)).collect();
            let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Ranks starting at 1, ties receiving their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| ranks[k] = r);
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two values".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .map(|r| r.clamp(-1.0, 1.0))
        .ok_or_else(|| Error::UndefinedCorrelation("constant input".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_reference_policies() {
        let sim = SimConfig::default();
        let n = 20_000;
        let blind = |x: &[f64], _s: usize| 1.0 / (1.0 + (-3.0 * x[0]).exp());
        assert!(action_fairness_gap_sim(&blind, &sim, n, 1).unwrap().abs() <= 2.0 / (n as f64).sqrt());
        let by_group = |_x: &[f64], s: usize| s as f64;
        assert_eq!(action_fairness_gap_sim(&by_group, &sim, n, 1).unwrap(), 1.0);
        let clamp = |x: &[f64], _s: usize| (x[1] + 1.0).clamp(0.0, 1.0);
        let g = action_fairness_gap_sim(&clamp, &sim, n, 1).unwrap();
        assert!((g - 0.5).abs() <= 3.0 / (n as f64).sqrt(), "{g}");
    }

    #[test]
    fn spearman_values() {
        let inc = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman_rank(&inc, &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rank(&inc, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        let s = [0.0, 0.0, 1.0, 1.0];
        let tied = spearman_rank(&s, &[0.1, 0.2, 0.2, 0.4]).unwrap();
        assert!((tied - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let untied = spearman_rank(&s, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((untied - 2.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(spearman_rank(&s, &[1.0; 4]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
