//! Policy heads trained on empirical policy values, optionally under
//! envy-free or max-min value fairness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::nn::{minibatches, one_hot, Head, Matrix, Mlp, Mode, NetHyper};
use crate::nuisance::NuisanceEstimates;
use crate::rng::{self, tags};
use crate::scores::{self, conditional_values, ScoreMethod, ValueReport};

/// Hyperparameters of the policy network.
pub type PolicyHyper = NetHyper;

/// What the policy head sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontEnd {
    /// Covariates concatenated with a one-hot encoding of the group.
    Raw,
    /// Covariates only.
    Blind,
    /// A frozen representation of the covariates.
    Representation(Mlp),
}

impl FrontEnd {
    pub fn is_group_blind(&self) -> bool {
        !matches!(self, FrontEnd::Raw)
    }

    pub fn features(&self, x: &Matrix, s: &[usize], groups: usize) -> Result<Matrix> {
        match self {
            FrontEnd::Raw => x.hstack(&one_hot(s, groups)),
            FrontEnd::Blind => Ok(x.clone()),
            FrontEnd::Representation(phi) => phi.predict(x),
        }
    }

    fn width(&self, p: usize, groups: usize) -> usize {
        match self {
            FrontEnd::Raw => p + groups,
            FrontEnd::Blind => p,
            FrontEnd::Representation(phi) => phi.out_dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Unrestricted,
    EnvyFree(f64),
    MaxMin,
}

impl Objective {
    pub fn name(&self) -> String {
        match self {
            Objective::Unrestricted => "unrestricted".into(),
            Objective::EnvyFree(l) => format!("envy_free({l})"),
            Objective::MaxMin => "max_min".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Objective::EnvyFree(l) if !(*l >= 0.0) => {
                Err(Error::Config(format!("envy-free weight {l} must be non-negative")))
            }
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, report: &ValueReport) -> f64 {
        match self {
            Objective::Unrestricted => report.v_hat,
            Objective::EnvyFree(l) => envy_free_objective(report, *l),
            Objective::MaxMin => maxmin_objective(report),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    /// Accepts `unrestricted`, `max_min`, `envy_free` (weight 0.5) and
    /// `envy_free(<lambda>)` or `envy_free:<lambda>`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace('-', "_");
        let obj = match t.as_str() {
            "unrestricted" | "none" => Objective::Unrestricted,
            "max_min" | "maxmin" => Objective::MaxMin,
            "envy_free" => Objective::EnvyFree(0.5),
            _ => {
                let rest = t
                    .strip_prefix("envy_free")
                    .map(|r| r.trim_start_matches([':', '(', '=']).trim_end_matches(')'))
                    .ok_or_else(|| Error::Config(format!("unknown objective {s:?}")))?;
                let l = rest
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad envy-free weight in {s:?}")))?;
                Objective::EnvyFree(l)
            }
        };
        obj.validate()?;
        Ok(obj)
    }
}

/// `V - lambda * max_{s,s'} |V_s - V_s'|`.
pub fn envy_free_objective(report: &ValueReport, lambda: f64) -> f64 {
    report.v_hat - lambda * report.max_gap()
}

/// `min_s V_s`.
pub fn maxmin_objective(report: &ValueReport) -> f64 {
    report.worst_group()
}

/// Objective value on a batch together with its gradient with respect to
/// each sample's score.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGrad {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Groups absent from the batch, left out of the max and min.
    pub missing_groups: usize,
}

/// Evaluates `objective` from per-sample scores using each batch's own group
/// shares. The max and min over groups use the first maximizing and first
/// minimizing group, which gives a subgradient at ties.
pub fn objective_grad(objective: Objective, scores: &[f64], s: &[usize], groups: usize) -> ObjectiveGrad {
    let n = scores.len() as f64;
    let v = scores.iter().sum::<f64>() / n;
    let mut sums = vec![0.0; groups];
    let mut counts = vec![0usize; groups];
    for (&g, &x) in s.iter().zip(scores) {
        sums[g] += x;
        counts[g] += 1;
    }
    let present: Vec<usize> = (0..groups).filter(|&g| counts[g] > 0).collect();
    let missing_groups = groups - present.len();
    let m = scores.len();
    if present.is_empty() {
        return ObjectiveGrad { value: f64::NAN, grad: vec![0.0; m], missing_groups };
    }
    let vs = |g: usize| sums[g] / counts[g] as f64;
    let (mut hi, mut lo) = (present[0], present[0]);
    for &g in &present[1..] {
        if vs(g) > vs(hi) {
            hi = g;
        }
        if vs(g) < vs(lo) {
            lo = g;
        }
    }
    let group_grad = |g: usize, w: f64, i: usize| if s[i] == g { w / counts[g] as f64 } else { 0.0 };
    let (value, grad): (f64, Vec<f64>) = match objective {
        Objective::Unrestricted => (v, vec![1.0 / n; m]),
        Objective::EnvyFree(lambda) => {
            let value = v - lambda * (vs(hi) - vs(lo));
            (value, (0..m).map(|i| 1.0 / n - group_grad(hi, lambda, i) + group_grad(lo, lambda, i)).collect())
        }
        Objective::MaxMin => (vs(lo), (0..m).map(|i| group_grad(lo, 1.0, i)).collect()),
    };
    ObjectiveGrad { value, grad, missing_groups }
}

/// Policy objective as a function of the policy outputs `pi`, with its
/// gradient with respect to `pi`.
pub fn policy_objective(
    objective: Objective,
    method: ScoreMethod,
    pi: &[f64],
    ds: &Dataset,
    nuis: &NuisanceEstimates,
) -> Result<(f64, Vec<f64>)> {
    let (c0, c1) = scores::affine_coefficients(method, ds, nuis)?;
    if pi.len() != ds.len() {
        return Err(Error::Shape("policy outputs and dataset are not aligned".into()));
    }
    let sc: Vec<f64> = (0..pi.len()).map(|i| c0[i] + c1[i] * pi[i]).collect();
    let og = objective_grad(objective, &sc, &ds.s, ds.group_count);
    Ok((og.value, og.grad.iter().zip(&c1).map(|(g, c)| g * c).collect()))
}

/// Anything mapping raw covariates and a group to a probability of action 1.
pub trait PolicyFn {
    fn prob(&self, x: &[f64], s: usize) -> f64;
}

impl<F: Fn(&[f64], usize) -> f64> PolicyFn for F {
    fn prob(&self, x: &[f64], s: usize) -> f64 {
        self(x, s)
    }
}

/// A front end composed with a sigmoid head.
///
/// [`TrainedPolicy::outputs`] reads datasets in the space the policy was
/// trained in; [`PolicyFn::prob`] takes raw covariates and applies the stored
/// standardizer first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub front_end: FrontEnd,
    pub head: Mlp,
    pub objective: Objective,
    pub method: ScoreMethod,
    pub group_count: usize,
    pub scaler: Option<Standardizer>,
}

impl TrainedPolicy {
    pub fn with_scaler(mut self, scaler: Standardizer) -> Self {
        self.scaler = Some(scaler);
        self
    }

    pub fn outputs(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let f = self.front_end.features(&ds.x, &ds.s, self.group_count)?;
        Ok(self.head.predict(&f)?.into_vec())
    }

    pub fn try_prob(&self, x: &[f64], s: usize) -> Result<f64> {
        let x = match &self.scaler {
            Some(sc) => sc.transform_row(x),
            None => x.to_vec(),
        };
        let m = Matrix::from_vec(1, x.len(), x)?;
        let f = self.front_end.features(&m, &[s], self.group_count)?;
        Ok(self.head.predict(&f)?.get(0, 0))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl PolicyFn for TrainedPolicy {
    /// Panics on a covariate vector of the wrong width.
    fn prob(&self, x: &[f64], s: usize) -> f64 {
        self.try_prob(x, s).expect("covariate width matches the policy")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyTrainReport {
    pub train_objective: Vec<f64>,
    pub val_objective: Vec<f64>,
    pub val_report: Option<ValueReport>,
    /// Minibatch steps in which at least one group was absent.
    pub missing_group_steps: usize,
}

impl PolicyTrainReport {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_objective", "val_objective"])?;
        for (e, t) in self.train_objective.iter().enumerate() {
            let v = self.val_objective.get(e).map(f64::to_string).unwrap_or_default();
            w.write_record([(e + 1).to_string(), t.to_string(), v])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn full_objective(
    objective: Objective,
    head: &Mlp,
    features: &Matrix,
    c0: &[f64],
    c1: &[f64],
    s: &[usize],
    groups: usize,
) -> Result<f64> {
    let pi = head.predict(features)?;
    let sc: Vec<f64> = pi.as_slice().iter().enumerate().map(|(i, p)| c0[i] + c1[i] * p).collect();
    Ok(objective_grad(objective, &sc, s, groups).value)
}

/// Minibatch gradient ascent on the empirical objective. Nuisances stay
/// fixed; only the head is trained.
#[allow(clippy::too_many_arguments)]
pub fn train_policy(
    train: &Dataset,
    train_nuis: &NuisanceEstimates,
    val: Option<(&Dataset, &NuisanceEstimates)>,
    front_end: FrontEnd,
    objective: Objective,
    method: ScoreMethod,
    hyper: &PolicyHyper,
    seed: u64,
) -> Result<(TrainedPolicy, PolicyTrainReport)> {
    hyper.validate()?;
    objective.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidData("empty training set".into()));
    }
    let groups = train.group_count;
    let (c0, c1) = scores::affine_coefficients(method, train, train_nuis)?;
    let features = front_end.features(&train.x, &train.s, groups)?;
    let val = match val {
        Some((ds, nu)) if !ds.is_empty() => {
            let (v0, v1) = scores::affine_coefficients(method, ds, nu)?;
            Some((ds, nu, front_end.features(&ds.x, &ds.s, groups)?, v0, v1))
        }
        _ => None,
    };

    let width = front_end.width(train.num_features(), groups);
    let mut head = hyper.build(width, 1, Head::Sigmoid, &mut rng::stream(seed, tags::POLICY_INIT))?;
    let mut opt = hyper.adam(head.num_params());
    let mut shuffle = rng::stream(seed, tags::POLICY_SHUFFLE);
    let mut dropout = rng::stream(seed, tags::POLICY_DROPOUT);

    let mut report = PolicyTrainReport::default();
    for epoch in 0..hyper.epochs {
        for batch in minibatches(train.len(), hyper.batch_size, &mut shuffle) {
            let pi = head.forward(&features.select_rows(&batch), Mode::Train, &mut dropout)?;
            let sb: Vec<usize> = batch.iter().map(|&i| train.s[i]).collect();
            let sc: Vec<f64> = batch
                .iter()
                .zip(pi.as_slice())
                .map(|(&i, p)| c0[i] + c1[i] * p)
                .collect();
            let og = objective_grad(objective, &sc, &sb, groups);
            if !og.value.is_finite() {
                return Err(Error::Diverged { epoch, what: "policy objective".into() });
            }
            if og.missing_groups > 0 && objective != Objective::Unrestricted {
                report.missing_group_steps += 1;
            }
            let d_pi: Vec<f64> = batch.iter().zip(&og.grad).map(|(&i, g)| -g * c1[i]).collect();
            let g = head.backward(&Matrix::column_vector(&d_pi))?;
            opt.step(head.params_mut(), &g.params)?;
        }
        let t = full_objective(objective, &head, &features, &c0, &c1, &train.s, groups)?;
        if !t.is_finite() {
            return Err(Error::Diverged { epoch, what: "policy objective".into() });
        }
        report.train_objective.push(t);
        if let Some((ds, _, f, v0, v1)) = &val {
            report.val_objective.push(full_objective(objective, &head, f, v0, v1, &ds.s, groups)?);
        }
    }

    let policy = TrainedPolicy {
        front_end,
        head,
        objective,
        method,
        group_count: groups,
        scaler: None,
    };
    if let Some((ds, nu, ..)) = &val {
        report.val_report = evaluate_policy(&policy, ds, nu, method).ok();
    }
    Ok((policy, report))
}

/// Evaluation-mode policy outputs scored with `method`.
pub fn evaluate_policy(
    policy: &TrainedPolicy,
    ds: &Dataset,
    nuis: &NuisanceEstimates,
    method: ScoreMethod,
) -> Result<ValueReport> {
    let pi = policy.outputs(ds)?;
    let sv = scores::score(method, &pi, ds, nuis)?;
    conditional_values(&sv, &ds.s, ds.group_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::NuisanceSource;

    fn report(v: f64, groups: &[f64]) -> ValueReport {
        ValueReport {
            v_hat: v,
            v_hat_by_group: groups.to_vec(),
            p_hat_by_group: vec![1.0 / groups.len() as f64; groups.len()],
        }
    }

    #[test]
    fn objective_hand_values() {
        let r = report(2.0, &[1.0, 3.0]);
        assert_eq!(envy_free_objective(&r, 0.0), 2.0);
        assert_eq!(envy_free_objective(&r, 0.5), 1.0);
        assert_eq!(envy_free_objective(&report(2.0, &[2.0, 2.0]), 7.0), 2.0);
        assert_eq!(maxmin_objective(&r), 1.0);
        assert_eq!(maxmin_objective(&report(4.0, &[4.0])), 4.0);
        assert_eq!(maxmin_objective(&report(0.73, &[0.73, 0.73])), 0.73);
    }

    #[test]
    fn objective_parsing() {
        assert_eq!("max_min".parse::<Objective>().unwrap(), Objective::MaxMin);
        assert_eq!("envy_free(0.3)".parse::<Objective>().unwrap(), Objective::EnvyFree(0.3));
        assert_eq!("envy-free:2".parse::<Objective>().unwrap(), Objective::EnvyFree(2.0));
        assert!("envy_free(-1)".parse::<Objective>().is_err());
        assert!("fair".parse::<Objective>().is_err());
    }

    #[test]
    fn subgradient_ties_pick_first_group() {
        let og = objective_grad(Objective::MaxMin, &[1.0, 1.0, 1.0, 1.0], &[0, 0, 1, 1], 2);
        assert_eq!(og.grad, vec![0.5, 0.5, 0.0, 0.0]);
        let og = objective_grad(Objective::MaxMin, &[1.0, 2.0, 3.0], &[0, 0, 0], 3);
        assert_eq!(og.missing_groups, 2);
        assert_eq!(og.value, 2.0);
    }

    fn always_positive_effect(n: usize) -> (Dataset, NuisanceEstimates) {
        let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64 / n as f64 - 0.5).collect()).unwrap();
        let s: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let a: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let mu1: Vec<f64> = (0..n).map(|i| 0.5 + (i % 5) as f64 * 0.1).collect();
        let y = (0..n).map(|i| if a[i] == 1 { mu1[i] } else { 0.0 }).collect();
        let ds = Dataset::new(x, s, a, y, 2, vec!["x".into()]).unwrap();
        let nuis = NuisanceEstimates {
            mu0_hat: vec![0.0; n],
            mu1_hat: mu1,
            pb_hat: vec![0.5; n],
            source: NuisanceSource::Oracle,
            clip_bound: 0.05,
        };
        (ds, nuis)
    }

    #[test]
    fn always_treat_when_effect_positive() {
        let (ds, nuis) = always_positive_effect(200);
        let hyper = NetHyper { epochs: 200, batch_size: 50, learning_rate: 1e-2, ..Default::default() };
        let (pol, rep) = train_policy(
            &ds,
            &nuis,
            Some((&ds, &nuis)),
            FrontEnd::Raw,
            Objective::Unrestricted,
            ScoreMethod::Dm,
            &hyper,
            1,
        )
        .unwrap();
        let out = pol.outputs(&ds).unwrap();
        assert!(out.iter().sum::<f64>() / out.len() as f64 >= 0.95);
        assert_eq!(rep.train_objective.len(), 200);
        assert_eq!(rep.val_objective.len(), 200);
        assert!(rep.val_report.is_some());
    }

    #[test]
    fn constant_policies_evaluate_to_nuisance_means() {
        let (ds, nuis) = always_positive_effect(60);
        let mut head = Mlp::zeros(&[3, 1], Head::Sigmoid).unwrap();
        head.set_layer(0, &[0.0; 3], &[40.0]).unwrap();
        let mut pol = TrainedPolicy {
            front_end: FrontEnd::Raw,
            head,
            objective: Objective::Unrestricted,
            method: ScoreMethod::Dm,
            group_count: 2,
            scaler: None,
        };
        let mean1 = nuis.mu1_hat.iter().sum::<f64>() / 60.0;
        let r = evaluate_policy(&pol, &ds, &nuis, ScoreMethod::Dm).unwrap();
        assert!((r.v_hat - mean1).abs() < 1e-12);
        pol.head.set_layer(0, &[0.0; 3], &[-40.0]).unwrap();
        let r = evaluate_policy(&pol, &ds, &nuis, ScoreMethod::Dm).unwrap();
        assert!(r.v_hat.abs() < 1e-12);
    }

    #[test]
    fn blind_front_ends_ignore_group() {
        let (ds, nuis) = always_positive_effect(40);
        let hyper = NetHyper { epochs: 5, ..Default::default() };
        let (pol, _) = train_policy(&ds, &nuis, None, FrontEnd::Blind, Objective::MaxMin, ScoreMethod::Dr, &hyper, 2).unwrap();
        for i in 0..ds.len() {
            let x = ds.x.row(i);
            assert_eq!(pol.prob(x, 0).to_bits(), pol.prob(x, 1).to_bits());
        }
        let back = TrainedPolicy::from_json(&pol.to_json().unwrap()).unwrap();
        assert_eq!(back, pol);
    }

    #[test]
    fn envy_free_penalty_non_increasing_in_lambda() {
        let r = report(0.4, &[0.1, 0.9, 0.3]);
        let vals: Vec<f64> = [0.0, 0.5, 1.0, 2.0].iter().map(|&l| envy_free_objective(&r, l)).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    }
}
