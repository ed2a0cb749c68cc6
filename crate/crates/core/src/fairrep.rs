//! Adversarial fair representation learning.
//!
//! Three networks share a minibatch loop: a base representation `phi` that
//! reads only the non-sensitive covariates, an outcome head `g_y` on top of
//! it, and an adversary `g_s` that tries to recover the sensitive attribute.
//! Each iteration performs, in this order:
//!
//! 1. an outcome-head step on the outcome loss,
//! 2. a representation step on `outcome loss + gamma * confusion loss`, with
//!    both heads held at their pre-step parameters,
//! 3. a fresh forward pass through the updated representation followed by an
//!    adversary step on the sensitivity loss.
//!
//! The confusion loss pushes the adversary's output toward the uniform
//! distribution, so the representation sheds information about `s`.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::nn::{minibatches, Head, Matrix, Mlp, Mode, NetHyper};
use crate::rng::{self, tags};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairRepHyper {
    pub rep_dim: usize,
    pub gamma: f64,
    pub net: NetHyper,
    /// Seed for the adversary's initialization; defaults to the run seed.
    pub adversary_seed: Option<u64>,
}

impl Default for FairRepHyper {
    fn default() -> Self {
        Self {
            rep_dim: 2,
            gamma: 0.5,
            net: NetHyper::default(),
            adversary_seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FairRepModel {
    pub phi: Mlp,
    pub g_y: Mlp,
    pub g_s: Mlp,
    pub gamma: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepTrainReport {
    pub outcome_loss: Vec<f64>,
    pub sensitivity_loss: Vec<f64>,
    pub confusion_loss: Vec<f64>,
    pub adversary_accuracy: f64,
    pub outcome_mse: f64,
}

impl RepTrainReport {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "outcome_loss", "sensitivity_loss", "confusion_loss"])?;
        for e in 0..self.outcome_loss.len() {
            w.write_record([
                (e + 1).to_string(),
                self.outcome_loss[e].to_string(),
                self.sensitivity_loss[e].to_string(),
                self.confusion_loss[e].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One parameter update inside [`train_fair_representation_observed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepUpdate {
    OutcomeHead { iteration: usize },
    Representation { iteration: usize },
    Adversary { iteration: usize },
}

pub fn outcome_loss(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / y.len() as f64
}

pub fn outcome_loss_grad(pred: &[f64], y: &[f64]) -> Matrix {
    let b = y.len() as f64;
    Matrix::column_vector(&pred.iter().zip(y).map(|(p, y)| 2.0 * (p - y) / b).collect::<Vec<_>>())
}

fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

fn floored_ln_grad(p: f64) -> f64 {
    if p > PROB_FLOOR {
        1.0 / p
    } else {
        0.0
    }
}

/// Mean categorical cross-entropy of `probs` (rows are distributions) against `s`.
pub fn sensitivity_loss(probs: &Matrix, s: &[usize]) -> f64 {
    (0..probs.rows()).map(|i| -floored_ln(probs.get(i, s[i]))).sum::<f64>() / probs.rows() as f64
}

pub fn sensitivity_loss_grad(probs: &Matrix, s: &[usize]) -> Matrix {
    let b = probs.rows() as f64;
    let mut g = Matrix::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        g.set(i, s[i], -floored_ln_grad(probs.get(i, s[i])) / b);
    }
    g
}

/// Mean over samples of `-(1/|S|) sum_j ln p_j`; at least `ln |S|`, with
/// equality exactly at the uniform distribution.
pub fn confusion_loss(probs: &Matrix) -> f64 {
    let k = probs.cols() as f64;
    (0..probs.rows())
        .map(|i| -probs.row(i).iter().map(|&p| floored_ln(p)).sum::<f64>() / k)
        .sum::<f64>()
        / probs.rows() as f64
}

pub fn confusion_loss_grad(probs: &Matrix) -> Matrix {
    let (b, k) = (probs.rows() as f64, probs.cols() as f64);
    let mut g = probs.clone();
    g.as_mut_slice().iter_mut().for_each(|p| *p = -floored_ln_grad(*p) / (k * b));
    g
}

pub fn accuracy(probs: &Matrix, s: &[usize]) -> f64 {
    let hits = (0..probs.rows())
        .filter(|&i| {
            let r = probs.row(i);
            let best = (0..r.len()).fold(0, |b, j| if r[j] > r[b] { j } else { b });
            best == s[i]
        })
        .count();
    hits as f64 / probs.rows().max(1) as f64
}

impl FairRepModel {
    /// Frozen representation of raw covariates (no sensitive attribute).
    pub fn represent(&self, x: &Matrix) -> Result<Matrix> {
        self.phi.predict(x)
    }

    /// Copy of `phi` whose outputs have zero mean and unit spread on `x`.
    /// The affine map is folded into the final linear layer.
    pub fn standardized_phi(&self, x: &Matrix) -> Result<Mlp> {
        let scaler = Standardizer::fit_matrix(&self.represent(x)?)?;
        let mut phi = self.phi.clone();
        let last = phi.num_layers() - 1;
        let (fan_in, fan_out) = (phi.dims()[last], phi.dims()[last + 1]);
        let off = phi.layer_offset(last);
        let mut w = phi.params()[off..off + fan_in * fan_out].to_vec();
        let mut b = phi.params()[off + fan_in * fan_out..off + fan_in * fan_out + fan_out].to_vec();
        for o in 0..fan_out {
            let (m, sd) = (scaler.mean[o], scaler.sd[o]);
            w[o * fan_in..(o + 1) * fan_in].iter_mut().for_each(|v| *v /= sd);
            b[o] = (b[o] - m) / sd;
        }
        phi.set_layer(last, &w, &b)?;
        Ok(phi)
    }

    pub fn outcome_loss(&self, x: &Matrix, y: &[f64]) -> Result<f64> {
        let r = self.represent(x)?;
        Ok(outcome_loss(self.g_y.predict(&r)?.as_slice(), y))
    }

    pub fn adversary_probs(&self, x: &Matrix) -> Result<Matrix> {
        self.g_s.predict(&self.represent(x)?)
    }

    pub fn sensitivity_loss(&self, x: &Matrix, s: &[usize]) -> Result<f64> {
        Ok(sensitivity_loss(&self.adversary_probs(x)?, s))
    }

    pub fn confusion_loss(&self, x: &Matrix) -> Result<f64> {
        Ok(confusion_loss(&self.adversary_probs(x)?))
    }
}

pub fn train_fair_representation(
    train: &Dataset,
    val: &Dataset,
    hyper: &FairRepHyper,
    seed: u64,
) -> Result<(FairRepModel, RepTrainReport)> {
    train_fair_representation_observed(train, val, hyper, seed, &mut |_| {})
}

/// [`train_fair_representation`] reporting every parameter update to `observer`.
pub fn train_fair_representation_observed(
    train: &Dataset,
    val: &Dataset,
    hyper: &FairRepHyper,
    seed: u64,
    observer: &mut dyn FnMut(RepUpdate),
) -> Result<(FairRepModel, RepTrainReport)> {
    let net = &hyper.net;
    net.validate()?;
    if hyper.rep_dim == 0 || !(hyper.gamma >= 0.0) {
        return Err(Error::Config("representation size must be positive and gamma non-negative".into()));
    }
    let groups = train.group_count;
    if hyper.gamma > 0.0 && groups < 2 {
        return Err(Error::Config("an adversary needs at least two groups".into()));
    }
    if train.is_empty() {
        return Err(Error::InvalidData("empty training set".into()));
    }
    let adv_out = groups.max(2);
    let p = train.num_features();
    let k = hyper.rep_dim;

    let mut phi = net.build(p, k, Head::Linear, &mut rng::stream(seed, tags::PHI_INIT))?;
    let mut g_y = net.build(k, 1, Head::Linear, &mut rng::stream(seed, tags::OUTCOME_HEAD_INIT))?;
    let adv_seed = hyper.adversary_seed.unwrap_or(seed);
    let mut g_s = net.build(k, adv_out, Head::Softmax, &mut rng::stream(adv_seed, tags::ADVERSARY_INIT))?;

    let mut opt_phi = net.adam(phi.num_params());
    let mut opt_y = net.adam(g_y.num_params());
    let mut opt_s = net.adam(g_s.num_params());

    let mut shuffle = rng::stream(seed, tags::REP_SHUFFLE);
    let mut drop_phi = rng::stream(seed, tags::PHI_DROPOUT);
    let mut drop_y = rng::stream(seed, tags::OUTCOME_HEAD_DROPOUT);
    let mut drop_s = rng::stream(seed, tags::ADVERSARY_DROPOUT);

    let mut report = RepTrainReport::default();
    let mut iteration = 0;
    for epoch in 0..net.epochs {
        let (mut ly, mut ls, mut lc) = (0.0, 0.0, 0.0);
        for batch in minibatches(train.len(), net.batch_size, &mut shuffle) {
            let w = batch.len() as f64 / train.len() as f64;
            let xb = train.x.select_rows(&batch);
            let yb: Vec<f64> = batch.iter().map(|&i| train.y[i]).collect();
            let sb: Vec<usize> = batch.iter().map(|&i| train.s[i]).collect();

            let rep = phi.forward(&xb, Mode::Train, &mut drop_phi)?;
            let pred = g_y.forward(&rep, Mode::Train, &mut drop_y)?;
            let probs = g_s.forward(&rep, Mode::Train, &mut drop_s)?;
            let loss_y = outcome_loss(pred.as_slice(), &yb);
            let loss_c = confusion_loss(&probs);
            if !loss_y.is_finite() || !loss_c.is_finite() {
                return Err(Error::Diverged { epoch, what: "representation losses".into() });
            }
            ly += w * loss_y;
            lc += w * loss_c;

            // (1) outcome head
            let gy = g_y.backward(&outcome_loss_grad(pred.as_slice(), &yb))?;
            opt_y.step(g_y.params_mut(), &gy.params)?;
            observer(RepUpdate::OutcomeHead { iteration });

            // (2) representation, against the pre-step heads
            let mut d_rep = gy.input;
            if hyper.gamma > 0.0 {
                let mut d_conf = g_s.backward(&confusion_loss_grad(&probs))?.input;
                d_conf.scale(hyper.gamma);
                d_rep.add_assign(&d_conf)?;
            }
            let gphi = phi.backward(&d_rep)?;
            opt_phi.step(phi.params_mut(), &gphi.params)?;
            observer(RepUpdate::Representation { iteration });

            // (3) adversary on the updated representation
            let rep = phi.forward(&xb, Mode::Train, &mut drop_phi)?;
            let probs = g_s.forward(&rep, Mode::Train, &mut drop_s)?;
            let loss_s = sensitivity_loss(&probs, &sb);
            if !loss_s.is_finite() {
                return Err(Error::Diverged { epoch, what: "sensitivity loss".into() });
            }
            ls += w * loss_s;
            let gs = g_s.backward(&sensitivity_loss_grad(&probs, &sb))?;
            opt_s.step(g_s.params_mut(), &gs.params)?;
            observer(RepUpdate::Adversary { iteration });
            iteration += 1;
        }
        report.outcome_loss.push(ly);
        report.sensitivity_loss.push(ls);
        report.confusion_loss.push(lc);
    }

    let model = FairRepModel { phi, g_y, g_s, gamma: hyper.gamma };
    let held = if val.is_empty() { train } else { val };
    report.adversary_accuracy = accuracy(&model.adversary_probs(&held.x)?, &held.s);
    report.outcome_mse = model.outcome_loss(&held.x, &held.y)?;
    Ok((model, report))
}

/// Held-out accuracy of a freshly trained softmax classifier predicting the
/// group from `train_features`. Features are standardized on the training
/// rows first.
pub fn probe_accuracy(
    train_features: &Matrix,
    train_s: &[usize],
    test_features: &Matrix,
    test_s: &[usize],
    groups: usize,
    hyper: &NetHyper,
    seed: u64,
) -> Result<f64> {
    hyper.validate()?;
    let scaler = Standardizer::fit_matrix(train_features)?;
    let train_features = &scaler.transform_matrix(train_features);
    let test_features = &scaler.transform_matrix(test_features);
    let mut rng = rng::stream(seed, tags::PROBE);
    let mut net = hyper.build(train_features.cols(), groups.max(2), Head::Softmax, &mut rng)?;
    let mut opt = hyper.adam(net.num_params());
    for _ in 0..hyper.epochs {
        for batch in minibatches(train_features.rows(), hyper.batch_size, &mut rng) {
            let sb: Vec<usize> = batch.iter().map(|&i| train_s[i]).collect();
            let probs = net.forward(&train_features.select_rows(&batch), Mode::Train, &mut rng)?;
            let g = net.backward(&sensitivity_loss_grad(&probs, &sb))?;
            opt.step(net.params_mut(), &g.params)?;
        }
    }
    Ok(accuracy(&net.predict(test_features)?, test_s))
}

/// Share of the most frequent group.
pub fn majority_rate(s: &[usize], groups: usize) -> f64 {
    let mut c = vec![0usize; groups.max(1)];
    s.iter().for_each(|&g| c[g] += 1);
    *c.iter().max().unwrap_or(&0) as f64 / s.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn loss_hand_values() {
        assert_eq!(outcome_loss(&[1.0, -2.0], &[1.0, -2.0]), 0.0);
        assert_eq!(outcome_loss(&[0.0, 0.0], &[1.0, -1.0]), 1.0);
        assert_eq!(outcome_loss(&[2.0], &[0.0]), 4.0);

        let certain = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert_eq!(sensitivity_loss(&certain, &[1]), 0.0);
        let uniform = Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        assert!((sensitivity_loss(&uniform, &[0, 1]) - 0.693_147_180_559_945_3).abs() < 1e-12);
        let skew = Matrix::from_rows(&[[0.9, 0.1]]).unwrap();
        assert!((sensitivity_loss(&skew, &[0]) - 0.105_360_515_657_826_3).abs() < 1e-12);

        assert!((confusion_loss(&uniform) - std::f64::consts::LN_2).abs() < 1e-12);
        let expect = -0.5 * (0.9f64.ln() + 0.1f64.ln());
        assert!((confusion_loss(&skew) - expect).abs() < 1e-12);
        assert!((expect - 1.2040).abs() < 1e-4);
    }

    #[test]
    fn zero_probability_is_floored() {
        let p = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(confusion_loss(&p).is_finite());
        assert!(sensitivity_loss(&p, &[1]).is_finite());
        assert!(confusion_loss_grad(&p).is_finite());
    }

    proptest! {
        #[test]
        fn confusion_bounded_below_by_log_groups(raw in prop::collection::vec(0.01..1.0f64, 2..6)) {
            let sum: f64 = raw.iter().sum();
            let row: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let k = row.len();
            let m = Matrix::from_vec(1, k, row).unwrap();
            prop_assert!(confusion_loss(&m) >= (k as f64).ln() - 1e-9);
            let u = Matrix::from_vec(1, k, vec![1.0 / k as f64; k]).unwrap();
            prop_assert!((confusion_loss(&u) - (k as f64).ln()).abs() <= 1e-9);
        }
    }

    fn independent_groups(n: usize, seed: u64) -> Dataset {
        let mut r = rng::stream(seed, 7);
        let mut x = Matrix::zeros(n, 2);
        let (mut s, mut a, mut y) = (vec![], vec![], vec![]);
        for i in 0..n {
            let (u, v): (f64, f64) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            x.set(i, 0, u);
            x.set(i, 1, v);
            s.push(usize::from(r.random::<f64>() < 0.5));
            a.push(1);
            y.push(u.sin() + 0.5 * v);
        }
        Dataset::new(x, s, a, y, 2, vec!["u".into(), "v".into()]).unwrap()
    }

    fn quick() -> FairRepHyper {
        FairRepHyper {
            rep_dim: 3,
            gamma: 0.5,
            net: NetHyper { epochs: 8, batch_size: 32, learning_rate: 5e-3, ..Default::default() },
            adversary_seed: None,
        }
    }

    #[test]
    fn updates_follow_outcome_representation_adversary_order() {
        let ds = independent_groups(100, 1);
        let mut events = Vec::new();
        train_fair_representation_observed(&ds, &ds, &quick(), 3, &mut |e| events.push(e)).unwrap();
        assert_eq!(events.len() % 3, 0);
        for (it, chunk) in events.chunks(3).enumerate() {
            assert_eq!(
                chunk,
                &[
                    RepUpdate::OutcomeHead { iteration: it },
                    RepUpdate::Representation { iteration: it },
                    RepUpdate::Adversary { iteration: it }
                ]
            );
        }
    }

    #[test]
    fn zero_gamma_representation_ignores_adversary_init() {
        let ds = independent_groups(120, 2);
        let mut h = FairRepHyper { gamma: 0.0, ..quick() };
        h.net.dropout = 0.1;
        let (a, ra) = train_fair_representation(&ds, &ds, &h, 5).unwrap();
        h.adversary_seed = Some(999);
        let (b, rb) = train_fair_representation(&ds, &ds, &h, 5).unwrap();
        assert_eq!(a.phi.params(), b.phi.params());
        assert_eq!(a.g_y.params(), b.g_y.params());
        assert_eq!(ra.outcome_loss, rb.outcome_loss);
        assert_ne!(a.g_s.params(), b.g_s.params());
    }

    #[test]
    fn adversary_cannot_beat_majority_without_signal() {
        let train = independent_groups(1200, 3);
        let val = independent_groups(400, 4);
        let h = FairRepHyper { net: NetHyper { epochs: 30, ..quick().net }, ..quick() };
        let (_, rep) = train_fair_representation(&train, &val, &h, 6).unwrap();
        assert!((rep.adversary_accuracy - majority_rate(&val.s, 2)).abs() <= 0.05);
        assert_eq!(rep.outcome_loss.len(), 30);
        assert!(rep.outcome_loss.last().unwrap() < &rep.outcome_loss[0]);
    }

    #[test]
    fn standardized_phi_has_unit_moments_and_same_ranking() {
        let ds = independent_groups(200, 8);
        let (m, _) = train_fair_representation(&ds, &ds, &quick(), 2).unwrap();
        let before = m.represent(&ds.x).unwrap();
        let after = m.standardized_phi(&ds.x).unwrap().predict(&ds.x).unwrap();
        for j in 0..after.cols() {
            let c = after.column(j);
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
            let b = before.column(j);
            assert!((0..c.len() - 1).all(|i| (b[i] < b[i + 1]) == (c[i] < c[i + 1])));
        }
    }

    #[test]
    fn positive_gamma_needs_two_groups() {
        let mut ds = independent_groups(20, 1);
        ds.s = vec![0; 20];
        ds.group_count = 1;
        ds.group_labels = vec!["0".into()];
        assert!(matches!(train_fair_representation(&ds, &ds, &quick(), 1), Err(Error::Config(_))));
        let h = FairRepHyper { gamma: 0.0, ..quick() };
        assert!(train_fair_representation(&ds, &ds, &h, 1).is_ok());
    }
}
