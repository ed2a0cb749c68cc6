//! Per-sample policy scores and the empirical (group-conditional) policy
//! values built from them.
//!
//! For a policy output `pi` (probability of action 1) and nuisances
//! `mu0, mu1, pb`:
//!
//! - DM:  `pi * mu1 + (1 - pi) * mu0`
//! - IPW: `w * y` with `w = [a pi + (1-a)(1-pi)] / [a pb + (1-a)(1-pb)]`
//! - DR:  `DM + w * (y - mu_a)`
//!
//! All three are affine in `pi`, which [`affine_coefficients`] exposes for
//! gradient computations. Nuisances are treated as fixed plug-ins.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceEstimates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ScoreMethod {
    Dm,
    Ipw,
    Dr,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 3] = [ScoreMethod::Dm, ScoreMethod::Ipw, ScoreMethod::Dr];

    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::Dm => "DM",
            ScoreMethod::Ipw => "IPW",
            ScoreMethod::Dr => "DR",
        }
    }
}

impl std::fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DM" => Ok(ScoreMethod::Dm),
            "IPW" => Ok(ScoreMethod::Ipw),
            "DR" => Ok(ScoreMethod::Dr),
            _ => Err(Error::Config(format!("unknown score method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub method: ScoreMethod,
    pub values: Vec<f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Standard error of the mean score (sample standard deviation / sqrt n).
    pub fn standard_error(&self) -> f64 {
        let n = self.values.len() as f64;
        let m = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }

    /// Writes `row,method,score` records keyed by the dataset's row ids.
    pub fn write_csv<W: Write>(&self, row_ids: &[usize], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "method", "score"])?;
        for (id, v) in row_ids.iter().zip(&self.values) {
            w.write_record([id.to_string(), self.method.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Overall and per-group empirical policy values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub v_hat: f64,
    pub v_hat_by_group: Vec<f64>,
    pub p_hat_by_group: Vec<f64>,
}

impl ValueReport {
    pub fn worst_group(&self) -> f64 {
        self.v_hat_by_group.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `max_{s,s'} |V_s - V_s'|`.
    pub fn max_gap(&self) -> f64 {
        let max = self.v_hat_by_group.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max - self.worst_group()
    }
}

fn check_aligned(policy_out: &[f64], ds: &Dataset, nuis: &NuisanceEstimates) -> Result<()> {
    let n = ds.len();
    if policy_out.len() != n || nuis.len() != n {
        return Err(Error::Shape(format!(
            "policy ({}), dataset ({n}) and nuisances ({}) are not aligned",
            policy_out.len(),
            nuis.len()
        )));
    }
    Ok(())
}

fn behavioral_denominator(a: u8, pb: f64) -> f64 {
    if a == 1 {
        pb
    } else {
        1.0 - pb
    }
}

fn check_propensities(method: ScoreMethod, nuis: &NuisanceEstimates) -> Result<()> {
    if method != ScoreMethod::Dm {
        if let Some(i) = nuis.pb_hat.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Numeric(format!(
                "propensity {} at row {i} is outside (0, 1)",
                nuis.pb_hat[i]
            )));
        }
    }
    Ok(())
}

pub fn score(
    method: ScoreMethod,
    policy_out: &[f64],
    ds: &Dataset,
    nuis: &NuisanceEstimates,
) -> Result<ScoreVector> {
    check_aligned(policy_out, ds, nuis)?;
    check_propensities(method, nuis)?;
    let values = (0..ds.len())
        .map(|i| {
            let pi = policy_out[i];
            let (a, y) = (ds.a[i], ds.y[i]);
            let (mu0, mu1) = (nuis.mu0_hat[i], nuis.mu1_hat[i]);
            let dm = pi * mu1 + (1.0 - pi) * mu0;
            let weight = || {
                let num = if a == 1 { pi } else { 1.0 - pi };
                num / behavioral_denominator(a, nuis.pb_hat[i])
            };
            match method {
                ScoreMethod::Dm => dm,
                ScoreMethod::Ipw => weight() * y,
                ScoreMethod::Dr => {
                    let mu_a = if a == 1 { mu1 } else { mu0 };
                    dm + weight() * (y - mu_a)
                }
            }
        })
        .collect::<Vec<_>>();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite policy score".into()));
    }
    Ok(ScoreVector { method, values })
}

/// Per-sample `(intercept, slope)` with `score_i = intercept_i + slope_i * pi_i`.
pub fn affine_coefficients(
    method: ScoreMethod,
    ds: &Dataset,
    nuis: &NuisanceEstimates,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if nuis.len() != ds.len() {
        return Err(Error::Shape("dataset and nuisances are not aligned".into()));
    }
    check_propensities(method, nuis)?;
    let n = ds.len();
    let (mut c0, mut c1) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (a, y) = (ds.a[i], ds.y[i]);
        let (mu0, mu1) = (nuis.mu0_hat[i], nuis.mu1_hat[i]);
        let sign = if a == 1 { 1.0 } else { -1.0 };
        let untreated = if a == 1 { 0.0 } else { 1.0 };
        let d = behavioral_denominator(a, nuis.pb_hat[i]);
        let (i0, i1) = match method {
            ScoreMethod::Dm => (mu0, mu1 - mu0),
            ScoreMethod::Ipw => (untreated * y / d, sign * y / d),
            ScoreMethod::Dr => {
                let r = y - if a == 1 { mu1 } else { mu0 };
                (mu0 + untreated * r / d, (mu1 - mu0) + sign * r / d)
            }
        };
        c0.push(i0);
        c1.push(i1);
    }
    Ok((c0, c1))
}

pub fn empirical_value(sv: &ScoreVector) -> Result<f64> {
    if sv.is_empty() {
        return Err(Error::InvalidData("empirical value of an empty score vector".into()));
    }
    Ok(sv.values.iter().sum::<f64>() / sv.len() as f64)
}

/// Group-reweighted values: `V_s = (1/n) sum 1{s_i = s} psi_i / p_hat(s)`,
/// which equals the mean score within group `s`.
pub fn conditional_values(sv: &ScoreVector, s: &[usize], group_count: usize) -> Result<ValueReport> {
    if sv.len() != s.len() {
        return Err(Error::Shape("scores and groups are not aligned".into()));
    }
    let v_hat = empirical_value(sv)?;
    let n = sv.len() as f64;
    let mut sums = vec![0.0; group_count];
    let mut counts = vec![0usize; group_count];
    for (&g, &v) in s.iter().zip(&sv.values) {
        if g >= group_count {
            return Err(Error::InvalidData(format!("group {g} >= {group_count}")));
        }
        sums[g] += v;
        counts[g] += 1;
    }
    if let Some(group) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroup { group });
    }
    let p_hat_by_group: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let v_hat_by_group = sums
        .iter()
        .zip(&p_hat_by_group)
        .map(|(sum, p)| sum / n / p)
        .collect();
    Ok(ValueReport {
        v_hat,
        v_hat_by_group,
        p_hat_by_group,
    })
}
