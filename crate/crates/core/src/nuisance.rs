//! Outcome regressions `mu0, mu1` and the behavioral propensity `pb`, either
//! fitted on the training split or read off the simulator's ground truth.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SimOracle};
use crate::error::{Error, Result};
use crate::nn::{minibatches, Head, Matrix, Mlp, Mode, NetHyper};
use crate::rng::{self, tags};

pub const DEFAULT_CLIP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceSource {
    Fitted,
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimates {
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    pub pb_hat: Vec<f64>,
    pub source: NuisanceSource,
    pub clip_bound: f64,
}

/// Clamps a propensity into `[xi, 1 - xi]`.
pub fn clip_propensity(p: f64, xi: f64) -> f64 {
    p.clamp(xi, 1.0 - xi)
}

impl NuisanceEstimates {
    pub fn len(&self) -> usize {
        self.mu0_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu0_hat.is_empty()
    }

    pub fn write_csv<W: Write>(&self, row_ids: &[usize], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "mu0_hat", "mu1_hat", "pb_hat"])?;
        for (k, id) in row_ids.iter().enumerate() {
            w.write_record([
                id.to_string(),
                self.mu0_hat[k].to_string(),
                self.mu1_hat[k].to_string(),
                self.pb_hat[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an exported nuisance table and aligns it with `row_ids`.
    pub fn read_csv<R: Read>(reader: R, row_ids: &[usize], clip_bound: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut by_row = HashMap::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |j: usize, name: &str| -> Result<f64> {
                let raw = rec.get(j).unwrap_or("");
                raw.parse().map_err(|_| Error::NonNumeric {
                    row: r + 1,
                    column: name.into(),
                    value: raw.into(),
                })
            };
            let id = field(0, "row")? as usize;
            by_row.insert(id, (field(1, "mu0_hat")?, field(2, "mu1_hat")?, field(3, "pb_hat")?));
        }
        let mut out = Self {
            mu0_hat: Vec::new(),
            mu1_hat: Vec::new(),
            pb_hat: Vec::new(),
            source: NuisanceSource::Fitted,
            clip_bound,
        };
        for id in row_ids {
            let (m0, m1, pb) = by_row
                .get(id)
                .ok_or_else(|| Error::InvalidData(format!("no nuisance values for row {id}")))?;
            out.mu0_hat.push(*m0);
            out.mu1_hat.push(*m1);
            out.pb_hat.push(*pb);
        }
        Ok(out)
    }
}

/// Ground-truth nuisances for a simulated dataset in its raw feature layout.
pub fn oracle_nuisance(ds: &Dataset, oracle: &SimOracle) -> NuisanceEstimates {
    let (mut mu0, mut mu1, mut pb) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..ds.len() {
        let (xu, xs, s) = (ds.x.get(i, 0), ds.x.get(i, 1), ds.s[i]);
        mu0.push(oracle.mu0(xu, xs, s));
        mu1.push(oracle.mu1(xu, xs, s));
        pb.push(oracle.propensity(xu, xs, s));
    }
    NuisanceEstimates {
        mu0_hat: mu0,
        mu1_hat: mu1,
        pb_hat: pb,
        source: NuisanceSource::Oracle,
        clip_bound: DEFAULT_CLIP,
    }
}

/// Shared trunk with one regression head per action arm. Inputs are
/// `[x | one_hot(s)]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub trunk: Mlp,
    pub heads: [Mlp; 2],
}

impl OutcomeModel {
    pub fn predict(&self, ds: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.trunk.predict(&ds.x_with_groups())?;
        let m0 = self.heads[0].predict(&t)?.into_vec();
        let m1 = self.heads[1].predict(&t)?.into_vec();
        Ok((m0, m1))
    }

    /// Mean squared error of the factual arm's prediction.
    pub fn factual_mse(&self, ds: &Dataset) -> Result<f64> {
        let (m0, m1) = self.predict(ds)?;
        let se: f64 = (0..ds.len())
            .map(|i| {
                let p = if ds.a[i] == 1 { m1[i] } else { m0[i] };
                (p - ds.y[i]).powi(2)
            })
            .sum();
        Ok(se / ds.len() as f64)
    }
}

fn require_both_arms(ds: &Dataset) -> Result<()> {
    let treated = ds.a.iter().filter(|&&a| a == 1).count();
    if treated == 0 || treated == ds.len() {
        return Err(Error::Fit(format!(
            "both actions must be present in training data ({treated} of {} treated)",
            ds.len()
        )));
    }
    Ok(())
}

/// Trains trunk and heads on squared error of the factual arm; each sample
/// only updates the head of the action it received.
pub fn fit_outcome_model(train: &Dataset, hyper: &NetHyper, seed: u64) -> Result<OutcomeModel> {
    hyper.validate()?;
    require_both_arms(train)?;
    let x = train.x_with_groups();
    let h = hyper.hidden;
    let mut init = rng::stream(seed, tags::OUTCOME_INIT);
    let mut trunk_dims = vec![x.cols()];
    trunk_dims.extend(std::iter::repeat_n(h, hyper.hidden_layers.max(1)));
    let mut trunk = Mlp::new(&trunk_dims, Head::Linear, hyper.dropout, &mut init)?;
    let mut heads = [
        Mlp::new(&[h, h, 1], Head::Linear, hyper.dropout, &mut init)?,
        Mlp::new(&[h, h, 1], Head::Linear, hyper.dropout, &mut init)?,
    ];
    let mut opt_trunk = hyper.adam(trunk.num_params());
    let mut opt_heads = [hyper.adam(heads[0].num_params()), hyper.adam(heads[1].num_params())];
    let mut rng = rng::stream(seed, tags::OUTCOME_TRAIN);

    for epoch in 0..hyper.epochs {
        for batch in minibatches(train.len(), hyper.batch_size, &mut rng) {
            let bsz = batch.len() as f64;
            let t = trunk.forward(&x.select_rows(&batch), Mode::Train, &mut rng)?;
            let mut dt = Matrix::zeros(batch.len(), h);
            let mut loss = 0.0;
            for arm in 0..2u8 {
                let rows: Vec<usize> = (0..batch.len()).filter(|&k| train.a[batch[k]] == arm).collect();
                if rows.is_empty() {
                    continue;
                }
                let head = &mut heads[arm as usize];
                let pred = head.forward(&t.select_rows(&rows), Mode::Train, &mut rng)?;
                let mut g = Matrix::zeros(rows.len(), 1);
                for (k, &r) in rows.iter().enumerate() {
                    let e = pred.get(k, 0) - train.y[batch[r]];
                    loss += e * e / bsz;
                    g.set(k, 0, 2.0 * e / bsz);
                }
                let grads = head.backward(&g)?;
                for (k, &r) in rows.iter().enumerate() {
                    dt.row_mut(r).copy_from_slice(grads.input.row(k));
                }
                opt_heads[arm as usize].step(head.params_mut(), &grads.params)?;
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, what: "outcome loss".into() });
            }
            let grads = trunk.backward(&dt)?;
            opt_trunk.step(trunk.params_mut(), &grads.params)?;
        }
    }
    Ok(OutcomeModel { trunk, heads })
}

/// Sigmoid classifier for `P(A = 1 | x, s)`; predictions are clipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityModel {
    pub net: Mlp,
    pub clip_bound: f64,
}

impl PropensityModel {
    pub fn predict_raw(&self, ds: &Dataset) -> Result<Vec<f64>> {
        Ok(self.net.predict(&ds.x_with_groups())?.into_vec())
    }

    pub fn predict(&self, ds: &Dataset) -> Result<Vec<f64>> {
        Ok(self
            .predict_raw(ds)?
            .into_iter()
            .map(|p| clip_propensity(p, self.clip_bound))
            .collect())
    }

    /// Mean binary cross-entropy of the clipped predictions.
    pub fn log_loss(&self, ds: &Dataset) -> Result<f64> {
        let p = self.predict(ds)?;
        Ok(binary_log_loss(&p, &ds.a))
    }
}

pub fn binary_log_loss(p: &[f64], a: &[u8]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(a)
        .map(|(&p, &a)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            if a == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / p.len() as f64
}

pub fn fit_propensity(train: &Dataset, hyper: &NetHyper, clip_bound: f64, seed: u64) -> Result<PropensityModel> {
    hyper.validate()?;
    if !(clip_bound > 0.0 && clip_bound < 0.5) {
        return Err(Error::Config(format!("clip bound {clip_bound} outside (0, 0.5)")));
    }
    require_both_arms(train)?;
    let x = train.x_with_groups();
    let mut net = hyper.build(x.cols(), 1, Head::Sigmoid, &mut rng::stream(seed, tags::PROPENSITY_INIT))?;
    let mut opt = hyper.adam(net.num_params());
    let mut rng = rng::stream(seed, tags::PROPENSITY_TRAIN);
    for epoch in 0..hyper.epochs {
        for batch in minibatches(train.len(), hyper.batch_size, &mut rng) {
            let bsz = batch.len() as f64;
            let p = net.forward(&x.select_rows(&batch), Mode::Train, &mut rng)?;
            let mut g = Matrix::zeros(batch.len(), 1);
            for (k, &i) in batch.iter().enumerate() {
                let pk = p.get(k, 0).clamp(1e-12, 1.0 - 1e-12);
                let a = f64::from(train.a[i]);
                g.set(k, 0, (pk - a) / (pk * (1.0 - pk)) / bsz);
            }
            if !g.is_finite() {
                return Err(Error::Diverged { epoch, what: "propensity loss".into() });
            }
            let grads = net.backward(&g)?;
            opt.step(net.params_mut(), &grads.params)?;
        }
    }
    Ok(PropensityModel { net, clip_bound })
}

/// Evaluates frozen nuisance models on `ds`.
pub fn fitted_nuisance(ds: &Dataset, outcome: &OutcomeModel, propensity: &PropensityModel) -> Result<NuisanceEstimates> {
    let (mu0_hat, mu1_hat) = outcome.predict(ds)?;
    Ok(NuisanceEstimates {
        mu0_hat,
        mu1_hat,
        pb_hat: propensity.predict(ds)?,
        source: NuisanceSource::Fitted,
        clip_bound: propensity.clip_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate, split, standardize, SimConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn synthetic(n: usize, seed: u64, f: impl Fn(f64, u8) -> f64, assign: impl Fn(f64, &mut crate::rng::Rng) -> u8) -> Dataset {
        let mut r = rng::stream(seed, 99);
        let mut x = Matrix::zeros(n, 1);
        let (mut s, mut a, mut y) = (vec![], vec![], vec![]);
        for i in 0..n {
            let xi: f64 = r.random_range(-1.0..1.0);
            let ai = assign(xi, &mut r);
            x.set(i, 0, xi);
            s.push(usize::from(r.random::<bool>()));
            a.push(ai);
            y.push(f(xi, ai));
        }
        Dataset::new(x, s, a, y, 2, vec!["x".into()]).unwrap()
    }

    fn fast() -> NetHyper {
        NetHyper { epochs: 60, batch_size: 32, learning_rate: 5e-3, ..Default::default() }
    }

    #[test]
    fn outcome_model_recovers_action_indicator() {
        let ds = synthetic(600, 1, |_, a| f64::from(a), |_, r| u8::from(r.random::<bool>()));
        let m = fit_outcome_model(&ds, &fast(), 3).unwrap();
        let held = synthetic(200, 2, |_, a| f64::from(a), |_, r| u8::from(r.random::<bool>()));
        let (m0, m1) = m.predict(&held).unwrap();
        let err = m0.iter().map(|v| v.abs()).chain(m1.iter().map(|v| (v - 1.0).abs())).fold(0.0, f64::max);
        assert!(err <= 0.05, "max abs error {err}");
    }

    #[test]
    fn outcome_model_constant_zero_target() {
        let ds = synthetic(400, 4, |_, _| 0.0, |_, r| u8::from(r.random::<bool>()));
        let hyper = NetHyper { epochs: 1500, batch_size: 400, learning_rate: 3e-3, ..Default::default() };
        let m = fit_outcome_model(&ds, &hyper, 5).unwrap();
        let (m0, m1) = m.predict(&ds).unwrap();
        let worst = m0.iter().chain(&m1).fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst <= 0.02, "{worst}");
    }

    #[test]
    fn missing_arm_is_a_fit_error() {
        let ds = synthetic(50, 4, |_, _| 0.0, |_, _| 1);
        assert!(matches!(fit_outcome_model(&ds, &fast(), 5), Err(Error::Fit(_))));
        assert!(matches!(fit_propensity(&ds, &fast(), 0.05, 5), Err(Error::Fit(_))));
    }

    #[test]
    fn fair_coin_propensity_is_flat() {
        let ds = synthetic(4000, 6, |_, _| 0.0, |_, r| u8::from(r.random::<bool>()));
        let held = synthetic(300, 7, |_, _| 0.0, |_, r| u8::from(r.random::<bool>()));
        let hyper = NetHyper { epochs: 40, batch_size: 128, learning_rate: 5e-3, weight_decay: 1e-3, ..Default::default() };
        let m = fit_propensity(&ds, &hyper, 0.05, 8).unwrap();
        let worst = m.predict(&held).unwrap().iter().fold(0.0f64, |a, p| a.max((p - 0.5).abs()));
        assert!(worst <= 0.05, "{worst}");
    }

    #[test]
    fn separable_assignment_saturates_to_clip_bounds() {
        let ds = synthetic(400, 6, |_, _| 0.0, |x, _| u8::from(x > 0.0));
        let hyper = NetHyper { epochs: 200, batch_size: 32, learning_rate: 1e-2, ..Default::default() };
        let m = fit_propensity(&ds, &hyper, 0.05, 8).unwrap();
        let p = m.predict(&ds).unwrap();
        for (pi, &x) in p.iter().zip(ds.x.as_slice()) {
            if x.abs() > 0.3 {
                assert!(*pi == 0.05 || *pi == 0.95, "p = {pi} at x = {x}");
            }
        }
    }

    #[test]
    fn simulated_nuisances_beat_baselines() {
        let (ds, _) = simulate(&SimConfig { n: 3000, seed: 21, ..Default::default() }).unwrap();
        let (tr, _, te) = split(&ds, (0.8, 0.0, 0.2), 21).unwrap();
        let (_, tr, o) = standardize(&tr, &[&te]).unwrap();
        let te = &o[0];
        let hyper = NetHyper { epochs: 100, batch_size: 64, learning_rate: 5e-3, ..Default::default() };
        let om = fit_outcome_model(&tr, &hyper, 1).unwrap();
        let mean = te.y.iter().sum::<f64>() / te.len() as f64;
        let var = te.y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / te.len() as f64;
        assert!(om.factual_mse(te).unwrap() < var);
        let pm = fit_propensity(&tr, &NetHyper { epochs: 60, ..hyper }, 0.05, 1).unwrap();
        assert!(pm.log_loss(te).unwrap() <= std::f64::consts::LN_2);
    }

    #[test]
    fn oracle_nuisance_values() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [0.75, 0.4], [0.2, -0.7]]).unwrap();
        let ds = Dataset::new(x, vec![0, 1, 0], vec![0, 1, 1], vec![0.0; 3], 2, vec!["x_u".into(), "x_s".into()]).unwrap();
        let o = SimOracle { p_s: 0.5 };
        let n = oracle_nuisance(&ds, &o);
        assert_eq!(n.pb_hat[0], 0.5);
        assert!(n.mu0_hat.iter().all(|&v| v == 0.0));
        assert!((n.mu1_hat[1] - 0.3).abs() < 1e-15);
        for i in 0..3 {
            let ite = o.ite(ds.x.get(i, 0), ds.x.get(i, 1), ds.s[i]);
            assert!((n.mu1_hat[i] - n.mu0_hat[i] - ite).abs() <= 1e-12);
        }
    }

    #[test]
    fn nuisance_csv_round_trip() {
        let n = NuisanceEstimates {
            mu0_hat: vec![0.1, -0.2],
            mu1_hat: vec![1.5, 0.25],
            pb_hat: vec![0.3, 0.7],
            source: NuisanceSource::Fitted,
            clip_bound: 0.05,
        };
        let mut buf = Vec::new();
        n.write_csv(&[7, 3], &mut buf).unwrap();
        let back = NuisanceEstimates::read_csv(buf.as_slice(), &[3, 7], 0.05).unwrap();
        assert_eq!(back.mu0_hat, vec![-0.2, 0.1]);
        assert_eq!(back.pb_hat, vec![0.7, 0.3]);
    }

    proptest! {
        #[test]
        fn clipping_is_idempotent_and_monotone(p in 0.0..=1.0f64, q in 0.0..=1.0f64, xi in 0.001..0.499f64) {
            let c = clip_propensity(p, xi);
            prop_assert_eq!(clip_propensity(c, xi), c);
            prop_assert!((xi..=1.0 - xi).contains(&c));
            if p <= q {
                prop_assert!(c <= clip_propensity(q, xi));
            }
        }
    }
}
