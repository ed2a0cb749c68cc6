//! Closed-form toy problems, exhaustive policy search over them, the two
//! fairness lemmas as checkable properties, and generalization-bound
//! penalties.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::nuisance::{NuisanceEstimates, NuisanceSource};
use crate::scores::ScoreMethod;

/// One covariate cell of a discrete toy problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyCell {
    pub s: usize,
    pub x: usize,
    pub prob: f64,
    pub mu1: f64,
    pub mu0: f64,
}

impl ToyCell {
    pub fn ite(&self) -> f64 {
        self.mu1 - self.mu0
    }
}

/// A discrete distribution over `(s, x)` cells with known outcome means.
/// A policy is a vector with one treatment probability per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyProblem {
    pub cells: Vec<ToyCell>,
}

fn cell(s: usize, x: usize, prob: f64, mu1: f64, mu0: f64) -> ToyCell {
    ToyCell { s, x, prob, mu1, mu0 }
}

impl ToyProblem {
    pub fn new(cells: Vec<ToyCell>) -> Result<Self> {
        let toy = Self { cells };
        toy.validate()?;
        Ok(toy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::InvalidData("toy problem without cells".into()));
        }
        if self.cells.iter().any(|c| !(c.prob >= 0.0) || !c.mu0.is_finite() || !c.mu1.is_finite()) {
            return Err(Error::InvalidData("toy cell with negative probability or non-finite mean".into()));
        }
        let total: f64 = self.cells.iter().map(|c| c.prob).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidData(format!("toy probabilities sum to {total}")));
        }
        if (0..self.group_count()).any(|g| self.group_prob(g) <= 0.0) {
            return Err(Error::InvalidData("toy group with zero probability".into()));
        }
        Ok(())
    }

    /// Credit example with female/male groups (0/1) and low/high GPA (0/1).
    /// Cells are ordered (F,L), (M,L), (F,H), (M,H).
    pub fn table4() -> Self {
        Self {
            cells: vec![
                cell(0, 0, 0.1, 0.0, 1.0),
                cell(1, 0, 0.4, 0.0, 1.0),
                cell(0, 1, 0.1, -1.0, 1.0),
                cell(1, 1, 0.4, 1.0, 0.0),
            ],
        }
    }

    /// Variant where every cell of the male group benefits from treatment.
    pub fn table5() -> Self {
        Self {
            cells: vec![
                cell(0, 0, 0.1, 0.0, -1.0),
                cell(1, 0, 0.4, 1.0, 0.0),
                cell(0, 1, 0.1, 0.0, -1.0),
                cell(1, 1, 0.4, 2.0, 0.0),
            ],
        }
    }

    /// Reads a CSV with header `s,x,prob,mu1,mu0`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let cells = rdr.deserialize::<ToyCell>().collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(cells)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn group_count(&self) -> usize {
        self.cells.iter().map(|c| c.s).max().map_or(0, |m| m + 1)
    }

    pub fn group_prob(&self, g: usize) -> f64 {
        self.cells.iter().filter(|c| c.s == g).map(|c| c.prob).sum()
    }

    /// Distinct covariate levels, ascending.
    pub fn levels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.cells.iter().map(|c| c.x).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Expands the distribution into `total` rows (cell counts
    /// `round(prob * total)`) with exact nuisances. Covariates are the single
    /// column `x`; actions alternate and outcomes equal the arm means.
    pub fn materialize(&self, total: usize) -> Result<(Dataset, NuisanceEstimates)> {
        let (mut xs, mut s, mut a, mut y) = (vec![], vec![], vec![], vec![]);
        let (mut mu0, mut mu1) = (vec![], vec![]);
        for c in &self.cells {
            let k = (c.prob * total as f64).round() as usize;
            for j in 0..k {
                let act = (j % 2) as u8;
                xs.push(c.x as f64);
                s.push(c.s);
                a.push(act);
                y.push(if act == 1 { c.mu1 } else { c.mu0 });
                mu0.push(c.mu0);
                mu1.push(c.mu1);
            }
        }
        let n = xs.len();
        let ds = Dataset::new(Matrix::from_vec(n, 1, xs)?, s, a, y, self.group_count(), vec!["x".into()])?;
        let nuis = NuisanceEstimates {
            mu0_hat: mu0,
            mu1_hat: mu1,
            pb_hat: vec![0.5; n],
            source: NuisanceSource::Oracle,
            clip_bound: 0.05,
        };
        Ok((ds, nuis))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyValues {
    pub v: f64,
    pub v_by_group: Vec<f64>,
    pub p_by_group: Vec<f64>,
}

impl ToyValues {
    pub fn worst_group(&self) -> f64 {
        self.v_by_group.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_gap(&self) -> f64 {
        let hi = self.v_by_group.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - self.worst_group()
    }
}

/// `V_s = sum_x P(x | s) [pi mu1 + (1 - pi) mu0]` and `V = sum_s P(s) V_s`.
pub fn toy_conditional_values(toy: &ToyProblem, policy: &[f64]) -> Result<ToyValues> {
    if policy.len() != toy.cells.len() {
        return Err(Error::Shape(format!("{} cell values for {} cells", policy.len(), toy.cells.len())));
    }
    let g = toy.group_count();
    let p_by_group: Vec<f64> = (0..g).map(|s| toy.group_prob(s)).collect();
    let mut v_by_group = vec![0.0; g];
    for (c, &pi) in toy.cells.iter().zip(policy) {
        v_by_group[c.s] += c.prob / p_by_group[c.s] * (pi * c.mu1 + (1.0 - pi) * c.mu0);
    }
    let v = v_by_group.iter().zip(&p_by_group).map(|(v, p)| v * p).sum();
    Ok(ToyValues { v, v_by_group, p_by_group })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyObjective {
    Unrestricted,
    EnvyFree(f64),
    /// Maximize `V` subject to `max gap <= alpha`. If no grid policy is
    /// feasible, the smallest achievable gap is used instead of `alpha`.
    EnvyConstrained(f64),
    MaxMin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySearchResult {
    pub policy: Vec<f64>,
    pub values: ToyValues,
    pub objective: f64,
}

const TIE: f64 = 1e-12;
const FEASIBLE: f64 = 1e-9;

/// Every grid policy in lexicographic order of grid indices. With
/// `af_constrained`, cells sharing a covariate level share one value.
fn grid_policies(toy: &ToyProblem, steps: usize, af_constrained: bool) -> impl Iterator<Item = Vec<f64>> + '_ {
    let levels = toy.levels();
    let slot: Vec<usize> = if af_constrained {
        toy.cells.iter().map(|c| levels.binary_search(&c.x).unwrap_or(0)).collect()
    } else {
        (0..toy.cells.len()).collect()
    };
    let free = if af_constrained { levels.len() } else { toy.cells.len() };
    let total = (steps + 1).pow(free as u32);
    (0..total).map(move |mut code| {
        let mut idx = vec![0usize; free];
        for k in (0..free).rev() {
            idx[k] = code % (steps + 1);
            code /= steps + 1;
        }
        slot.iter().map(|&k| idx[k] as f64 / steps as f64).collect()
    })
}

fn grid_steps(grid_step: f64) -> Result<usize> {
    let steps = (1.0 / grid_step).round();
    if !(grid_step > 0.0) || (steps * grid_step - 1.0).abs() > 1e-9 || steps > 1000.0 {
        return Err(Error::Config(format!("grid step {grid_step} must divide 1")));
    }
    Ok(steps as usize)
}

/// Lexicographic comparison where differences within `TIE` count as equal.
fn improves(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if *x > y + TIE {
            return true;
        }
        if *x < y - TIE {
            return false;
        }
    }
    false
}

/// Exhaustive search over per-cell values in `{0, step, ..., 1}`. Max-min
/// ties are refined leximin-style (then the second-worst group, and so on);
/// remaining ties go to the lexicographically smallest policy vector.
pub fn brute_force_toy_search(
    toy: &ToyProblem,
    objective: ToyObjective,
    grid_step: f64,
    af_constrained: bool,
) -> Result<ToySearchResult> {
    toy.validate()?;
    let steps = grid_steps(grid_step)?;
    let score = |v: &ToyValues, alpha: f64| -> Option<f64> {
        match objective {
            ToyObjective::Unrestricted => Some(v.v),
            ToyObjective::EnvyFree(l) => Some(v.v - l * v.max_gap()),
            ToyObjective::MaxMin => Some(v.worst_group()),
            ToyObjective::EnvyConstrained(_) => (v.max_gap() <= alpha + FEASIBLE).then_some(v.v),
        }
    };
    let alpha = match objective {
        ToyObjective::EnvyConstrained(a) => {
            let min_gap = grid_policies(toy, steps, af_constrained)
                .map(|p| toy_conditional_values(toy, &p).map(|v| v.max_gap()))
                .try_fold(f64::INFINITY, |m, g| g.map(|g| m.min(g)))?;
            a.max(min_gap)
        }
        _ => 0.0,
    };
    let key = |v: &ToyValues, obj: f64| -> Vec<f64> {
        if objective == ToyObjective::MaxMin {
            let mut g = v.v_by_group.clone();
            g.sort_by(f64::total_cmp);
            g
        } else {
            vec![obj]
        }
    };
    let mut best: Option<(Vec<f64>, ToySearchResult)> = None;
    for p in grid_policies(toy, steps, af_constrained) {
        let values = toy_conditional_values(toy, &p)?;
        let Some(obj) = score(&values, alpha) else { continue };
        let k = key(&values, obj);
        if best.as_ref().is_none_or(|(bk, _)| improves(&k, bk)) {
            best = Some((k, ToySearchResult { policy: p, values, objective: obj }));
        }
    }
    let best = best.map(|(_, r)| r);
    best.ok_or_else(|| Error::Numeric("no feasible grid policy".into()))
}

/// Treats a cell exactly when its effect is positive; this maximizes every
/// group's value at once.
pub fn per_group_optimal_policy(toy: &ToyProblem) -> Vec<f64> {
    toy.cells.iter().map(|c| f64::from(c.ite() > 0.0)).collect()
}

/// Checks that the policy maximizing each group's value separately attains
/// both the max-min optimum and the unrestricted optimum over the grid.
pub fn check_lemma1(toy: &ToyProblem, grid_step: f64) -> Result<bool> {
    let per_group = toy_conditional_values(toy, &per_group_optimal_policy(toy))?;
    let mm = brute_force_toy_search(toy, ToyObjective::MaxMin, grid_step, false)?;
    let un = brute_force_toy_search(toy, ToyObjective::Unrestricted, grid_step, false)?;
    Ok(per_group.worst_group() >= mm.objective - FEASIBLE && per_group.v >= un.objective - FEASIBLE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaVerdict {
    Holds,
    Fails,
    Inapplicable,
}

/// Checks that the action-fair max-min optimum equalizes group values and
/// matches the best action-fair policy with zero envy. Requires the
/// action-fair max-min optimum to be interior on some positive-probability
/// cell with a nonzero effect; otherwise the verdict is `Inapplicable`.
pub fn check_lemma2(toy: &ToyProblem, grid_step: f64) -> Result<LemmaVerdict> {
    toy.validate()?;
    if toy.cells.iter().all(|c| c.ite() == 0.0) {
        return Ok(LemmaVerdict::Holds);
    }
    let mm = brute_force_toy_search(toy, ToyObjective::MaxMin, grid_step, true)?;
    let interior = toy
        .cells
        .iter()
        .zip(&mm.policy)
        .any(|(c, &p)| c.prob > 0.0 && c.ite() != 0.0 && p > 0.0 && p < 1.0);
    if !interior {
        return Ok(LemmaVerdict::Inapplicable);
    }
    let scale = toy.cells.iter().map(|c| c.ite().abs()).fold(0.0, f64::max);
    let tol = 2.0 * grid_step * scale;
    let ef = brute_force_toy_search(toy, ToyObjective::EnvyConstrained(0.0), grid_step, true)?;
    let equalized = mm.values.max_gap() <= tol;
    let same_worst = (ef.values.worst_group() - mm.objective).abs() <= tol;
    Ok(if equalized && same_worst { LemmaVerdict::Holds } else { LemmaVerdict::Fails })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Unrestricted,
    EnvyFree,
    MaxMin,
}

impl BoundKind {
    pub const ALL: [BoundKind; 3] = [BoundKind::Unrestricted, BoundKind::EnvyFree, BoundKind::MaxMin];
}

/// Inputs of the generalization bounds. Logarithms are natural.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: f64,
    pub nu: f64,
    pub group_count: usize,
    pub c: f64,
    pub xi: f64,
    pub rademacher: f64,
    pub p: f64,
    pub p1: f64,
    pub p2: f64,
    pub method: ScoreMethod,
}

impl BoundInputs {
    /// Defaults with `R_n = 1 / sqrt(n)`.
    pub fn with_n(n: f64) -> Self {
        Self {
            n,
            nu: 0.4,
            group_count: 2,
            c: 1.0,
            xi: 0.1,
            rademacher: 1.0 / n.sqrt(),
            p: 0.05,
            p1: 0.05,
            p2: 0.05,
            method: ScoreMethod::Dm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.n > 0.0) || !(self.c > 0.0) || !(self.rademacher >= 0.0) {
            return bad("n and C must be positive and R_n non-negative");
        }
        if self.group_count == 0 || !(self.nu > 0.0 && self.nu <= 1.0 / self.group_count as f64 + 1e-15) {
            return bad("nu must lie in (0, 1/|S|]");
        }
        if !(self.xi > 0.0 && self.xi < 0.5) {
            return bad("xi must lie in (0, 0.5)");
        }
        if !(self.p > 0.0 && self.p < 1.0) || !(self.p1 > 0.0 && self.p2 > 0.0 && self.p1 + self.p2 < 1.0) {
            return bad("failure probabilities must satisfy p in (0,1) and p1 + p2 in (0,1)");
        }
        Ok(())
    }

    pub fn k(&self) -> f64 {
        k_constant(self.method, self.xi)
    }

    /// `l(n, p2) = 1 - nu + sqrt(ln(|S| / p2) / 2)`.
    pub fn ell(&self) -> f64 {
        1.0 - self.nu + ((self.group_count as f64 / self.p2).ln() / 2.0).sqrt()
    }

    /// `l(n, p2) / sqrt(n)`, which must stay below `nu` for the fair bounds.
    pub fn ratio(&self) -> f64 {
        self.ell() / self.n.sqrt()
    }
}

/// Bounded-difference constant of each score.
pub fn k_constant(method: ScoreMethod, xi: f64) -> f64 {
    match method {
        ScoreMethod::Dm => 1.0,
        ScoreMethod::Ipw => 1.0 / (2.0 * xi),
        ScoreMethod::Dr => (xi + 1.0) / xi,
    }
}

/// The term subtracted from the empirical objective in each bound.
pub fn bound_penalty(inp: &BoundInputs, kind: BoundKind) -> Result<f64> {
    inp.validate()?;
    let (n, nu, s) = (inp.n, inp.nu, inp.group_count as f64);
    let ck = 2.0 * inp.c * inp.k();
    let r = inp.rademacher;
    if kind == BoundKind::Unrestricted {
        return Ok(ck * (r + (8.0 * (2.0 / inp.p).ln() / n).sqrt()));
    }
    let ell = inp.ell();
    let ratio = ell / n.sqrt();
    if !(ratio < nu) {
        return Err(Error::BoundInapplicable { ell, ratio, nu });
    }
    let tail = ell / (nu - ratio) / n.sqrt();
    Ok(match kind {
        BoundKind::EnvyFree => {
            ck * (2.0 + nu) / nu
                * (r + (8.0 * (4.0 * s / inp.p1).ln() / n).sqrt() + 2.0 / (2.0 + nu) * tail)
        }
        BoundKind::MaxMin => ck / nu * (r + (8.0 * (2.0 * s / inp.p1).ln() / n).sqrt() + tail),
        BoundKind::Unrestricted => unreachable!(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub kind: BoundKind,
    pub applicable: bool,
    pub penalty: Option<f64>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub k: f64,
    pub ell: f64,
    pub ratio: f64,
    pub bounds: Vec<BoundEntry>,
}

/// All three penalties; an unmet precondition marks that entry inapplicable.
pub fn bound_report(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    let bounds = BoundKind::ALL
        .iter()
        .map(|&kind| match bound_penalty(inp, kind) {
            Ok(v) => Ok(BoundEntry { kind, applicable: true, penalty: Some(v), message: None }),
            Err(e @ Error::BoundInapplicable { .. }) => Ok(BoundEntry {
                kind,
                applicable: false,
                penalty: None,
                message: Some(e.to_string()),
            }),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport { inputs: *inp, k: inp.k(), ell: inp.ell(), ratio: inp.ratio(), bounds })
}

#[cfg(test)]
mod tests {
    use super::*;

    const STEP: f64 = 1.0 / 30.0;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn table4_values() {
        let t = ToyProblem::table4();
        let v = toy_conditional_values(&t, &[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(close(v.v_by_group[0], 1.0, 1e-12) && close(v.v_by_group[1], 1.0, 1e-12) && close(v.v, 1.0, 1e-12));
        assert!(close(toy_conditional_values(&t, &[0.0; 4]).unwrap().v, 0.6, 1e-12));
    }

    #[test]
    fn conditional_values_are_half_the_summed_forms() {
        // closed forms that sum over x instead of averaging within the group
        let t = ToyProblem::table4();
        for p in grid_policies(&t, 3, false) {
            let v = toy_conditional_values(&t, &p).unwrap();
            let f = 2.0 - p[0] - 2.0 * p[2];
            let m = 1.0 - p[1] + p[3];
            assert!(close(v.v_by_group[0], f / 2.0, 1e-12));
            assert!(close(v.v_by_group[1], m / 2.0, 1e-12));
            let total = 1.2 + 0.8 * p[3] - 0.2 * p[0] - 0.4 * p[2] - 0.8 * p[1];
            assert!(close(v.v, total / 2.0, 1e-12));
        }
        let t5 = ToyProblem::table5();
        let v = toy_conditional_values(&t5, &[1.0; 4]).unwrap();
        assert!(close(v.v_by_group[0], 0.0, 1e-12));
        assert!(close(v.v_by_group[1], 1.5, 1e-12));
    }

    #[test]
    fn decomposition_holds() {
        for t in [ToyProblem::table4(), ToyProblem::table5()] {
            for p in grid_policies(&t, 2, false) {
                let v = toy_conditional_values(&t, &p).unwrap();
                let d: f64 = v.v_by_group.iter().zip(&v.p_by_group).map(|(a, b)| a * b).sum();
                assert!(close(v.v, d, 1e-15));
            }
        }
    }

    #[test]
    fn table4_optima() {
        let t = ToyProblem::table4();
        let u = brute_force_toy_search(&t, ToyObjective::Unrestricted, STEP, false).unwrap();
        assert_eq!(u.policy, vec![0.0, 0.0, 0.0, 1.0]);
        let af = brute_force_toy_search(&t, ToyObjective::Unrestricted, STEP, true).unwrap();
        assert_eq!(af.policy, vec![0.0, 0.0, 1.0, 1.0]);
        let mm = brute_force_toy_search(&t, ToyObjective::MaxMin, STEP, true).unwrap();
        assert_eq!(mm.policy, vec![0.0, 0.0, 10.0 / 30.0, 10.0 / 30.0]);
    }

    #[test]
    fn table5_unconstrained_max_min_treats_everyone() {
        let mm = brute_force_toy_search(&ToyProblem::table5(), ToyObjective::MaxMin, STEP, false).unwrap();
        assert_eq!(mm.policy, vec![1.0; 4]);
    }

    #[test]
    fn af_search_is_constant_in_group() {
        for obj in [ToyObjective::Unrestricted, ToyObjective::MaxMin, ToyObjective::EnvyFree(1.0), ToyObjective::EnvyConstrained(0.0)] {
            let r = brute_force_toy_search(&ToyProblem::table4(), obj, 0.1, true).unwrap();
            assert_eq!(r.policy[0], r.policy[1]);
            assert_eq!(r.policy[2], r.policy[3]);
        }
    }

    #[test]
    fn envy_constraint_falls_back_to_smallest_gap() {
        let t = ToyProblem::table5();
        let r = brute_force_toy_search(&t, ToyObjective::EnvyConstrained(0.0), 0.5, true).unwrap();
        let min_gap = grid_policies(&t, 2, true)
            .map(|p| toy_conditional_values(&t, &p).unwrap().max_gap())
            .fold(f64::INFINITY, f64::min);
        assert!(min_gap > 0.0);
        assert!(close(r.values.max_gap(), min_gap, 1e-9));
    }

    #[test]
    fn lemmas() {
        assert!(check_lemma1(&ToyProblem::table4(), STEP).unwrap());
        assert!(check_lemma1(&ToyProblem::table5(), STEP).unwrap());
        let one = ToyProblem::new(vec![cell(0, 0, 0.5, 1.0, 0.0), cell(0, 1, 0.5, -1.0, 0.0)]).unwrap();
        assert!(check_lemma1(&one, STEP).unwrap());
        assert_eq!(check_lemma2(&ToyProblem::table4(), STEP).unwrap(), LemmaVerdict::Holds);
        assert_eq!(check_lemma2(&ToyProblem::table5(), STEP).unwrap(), LemmaVerdict::Inapplicable);
        let flat = ToyProblem::new(vec![cell(0, 0, 0.5, 0.3, 0.3), cell(1, 0, 0.5, -1.0, -1.0)]).unwrap();
        assert_eq!(check_lemma2(&flat, STEP).unwrap(), LemmaVerdict::Holds);
    }

    #[test]
    fn csv_round_trip() {
        let text = "s,x,prob,mu1,mu0\n0,0,0.1,0,1\n1,0,0.4,0,1\n0,1,0.1,-1,1\n1,1,0.4,1,0\n";
        assert_eq!(ToyProblem::read_csv(text.as_bytes()).unwrap(), ToyProblem::table4());
        assert!(ToyProblem::read_csv("s,x,prob,mu1,mu0\n0,0,0.5,0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn materialized_toy_matches_closed_form() {
        let t = ToyProblem::table4();
        let (ds, nuis) = t.materialize(100).unwrap();
        assert_eq!(ds.len(), 100);
        let pol = [0.0, 0.0, 0.0, 1.0];
        let cell_of = |i: usize| t.cells.iter().position(|c| c.s == ds.s[i] && c.x as f64 == ds.x.get(i, 0)).unwrap();
        let pi: Vec<f64> = (0..ds.len()).map(|i| pol[cell_of(i)]).collect();
        let sv = crate::scores::score(ScoreMethod::Dm, &pi, &ds, &nuis).unwrap();
        assert!(close(crate::scores::empirical_value(&sv).unwrap(), 1.0, 1e-12));
    }

    #[test]
    fn k_constants() {
        assert_eq!(k_constant(ScoreMethod::Dm, 0.1), 1.0);
        assert_eq!(k_constant(ScoreMethod::Ipw, 0.1), 5.0);
        assert_eq!(k_constant(ScoreMethod::Dr, 0.1), 11.0);
    }

    #[test]
    fn penalty_scaling() {
        let mut a = BoundInputs::with_n(100.0);
        a.rademacher = 0.0;
        let mut b = a;
        b.n = 400.0;
        let pa = bound_penalty(&a, BoundKind::Unrestricted).unwrap();
        let pb = bound_penalty(&b, BoundKind::Unrestricted).unwrap();
        assert!(close(pb, pa / 2.0, 1e-15));
    }

    #[test]
    fn reference_values() {
        let inp = BoundInputs { rademacher: 0.01, ..BoundInputs::with_n(1e4) };
        assert!(close(inp.ell(), 1.958_101_515_740_619_5, 1e-12));
        assert!(close(bound_penalty(&inp, BoundKind::EnvyFree).unwrap(), 1.399_352_989_141_783, 1e-12));
        assert!(close(bound_penalty(&inp, BoundKind::MaxMin).unwrap(), 0.603_402_609_451_986_6, 1e-12));
        assert!(close(bound_penalty(&inp, BoundKind::Unrestricted).unwrap(), 0.128_648_121_259_249_56, 1e-12));
        let ipw = BoundInputs { method: ScoreMethod::Ipw, ..inp };
        assert!(close(bound_penalty(&ipw, BoundKind::EnvyFree).unwrap(), 6.996_764_945_708_915, 1e-11));
        let dr = BoundInputs { method: ScoreMethod::Dr, ..inp };
        assert!(close(bound_penalty(&dr, BoundKind::EnvyFree).unwrap(), 15.392_882_880_559_613, 1e-11));
    }

    #[test]
    fn precondition_gates_fair_bounds() {
        let small = BoundInputs::with_n(10.0);
        assert!(small.ratio() >= small.nu);
        assert!(matches!(bound_penalty(&small, BoundKind::EnvyFree), Err(Error::BoundInapplicable { .. })));
        assert!(matches!(bound_penalty(&small, BoundKind::MaxMin), Err(Error::BoundInapplicable { .. })));
        assert!(bound_penalty(&small, BoundKind::Unrestricted).is_ok());
        let r = bound_report(&small).unwrap();
        assert!(r.bounds[0].applicable && !r.bounds[1].applicable && !r.bounds[2].applicable);
    }
}
