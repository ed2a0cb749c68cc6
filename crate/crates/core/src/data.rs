//! Observational datasets: the synthetic credit-lending simulator with its
//! ground truth, CSV ingestion, seeded splitting and standardization.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{one_hot, sigmoid, Matrix};
use crate::rng::{self, tags};

/// Maximum number of distinct sensitive-attribute values accepted from CSV.
pub const MAX_GROUPS: usize = 16;

/// `n` samples of covariates `x`, sensitive attribute `s`, binary action `a`
/// and real outcome `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub s: Vec<usize>,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub group_count: usize,
    pub feature_names: Vec<String>,
    /// Label of each group index, as read from or written to CSV.
    pub group_labels: Vec<String>,
    /// Row index in the dataset this one was derived from.
    pub row_ids: Vec<usize>,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        s: Vec<usize>,
        a: Vec<u8>,
        y: Vec<f64>,
        group_count: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = x.rows();
        let ds = Self {
            group_labels: (0..group_count).map(|g| g.to_string()).collect(),
            row_ids: (0..n).collect(),
            x,
            s,
            a,
            y,
            group_count,
            feature_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if self.s.len() != n || self.a.len() != n || self.y.len() != n || self.row_ids.len() != n {
            return Err(Error::InvalidData(format!(
                "column lengths differ: x {n}, s {}, a {}, y {}",
                self.s.len(),
                self.a.len(),
                self.y.len()
            )));
        }
        if self.group_count == 0 {
            return Err(Error::InvalidData("group_count must be at least 1".into()));
        }
        if self.feature_names.len() != self.x.cols() || self.group_labels.len() != self.group_count {
            return Err(Error::InvalidData("feature names or group labels do not match shape".into()));
        }
        if let Some(i) = self.s.iter().position(|&s| s >= self.group_count) {
            return Err(Error::InvalidData(format!("row {i}: group {} >= {}", self.s[i], self.group_count)));
        }
        if let Some(i) = self.a.iter().position(|&a| a > 1) {
            return Err(Error::InvalidData(format!("row {i}: action {} not binary", self.a[i])));
        }
        if !self.x.is_finite() || self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite entries".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            s: idx.iter().map(|&i| self.s[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            group_count: self.group_count,
            feature_names: self.feature_names.clone(),
            group_labels: self.group_labels.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// `[x | one_hot(s)]`, the input of networks that may read `s`.
    pub fn x_with_groups(&self) -> Matrix {
        self.x
            .hstack(&one_hot(&self.s, self.group_count))
            .expect("row counts agree")
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.group_count];
        self.s.iter().for_each(|&s| c[s] += 1);
        c
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.extend(["s", "a", "y"]);
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.group_labels[self.s[i]].clone());
            rec.push(self.a[i].to_string());
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub x_columns: Vec<String>,
    pub s_column: String,
    pub a_column: String,
    pub y_column: String,
    /// Fixed label order for `s`. When absent, labels are numbered in order
    /// of first appearance.
    pub group_labels: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn new(x_columns: &[&str], s: &str, a: &str, y: &str) -> Self {
        Self {
            x_columns: x_columns.iter().map(|c| c.to_string()).collect(),
            s_column: s.into(),
            a_column: a.into(),
            y_column: y.into(),
            group_labels: None,
        }
    }

    pub fn with_group_labels(mut self, labels: &[&str]) -> Self {
        self.group_labels = Some(labels.iter().map(|l| l.to_string()).collect());
        self
    }
}

/// Reads a CSV file. Row numbers in errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn { column: name.to_string() })
    };
    let x_idx = schema.x_columns.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let (s_idx, a_idx, y_idx) = (col(&schema.s_column)?, col(&schema.a_column)?, col(&schema.y_column)?);

    let mut labels: Vec<String> = schema.group_labels.clone().unwrap_or_default();
    let fixed_labels = schema.group_labels.is_some();
    let mut label_index: HashMap<String, usize> =
        labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();

    let p = x_idx.len();
    let (mut xs, mut s, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        let number = |j: usize, name: &str| -> Result<f64> {
            let raw = rec.get(j).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::NonNumeric {
                row,
                column: name.to_string(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column: name.to_string() });
            }
            Ok(v)
        };
        for (&j, name) in x_idx.iter().zip(&schema.x_columns) {
            xs.push(number(j, name)?);
        }
        let raw_a = rec.get(a_idx).unwrap_or("");
        let av = match raw_a.parse::<f64>() {
            Ok(v) if v == 0.0 => 0,
            Ok(v) if v == 1.0 => 1,
            _ => {
                return Err(Error::NonBinaryAction {
                    row,
                    column: schema.a_column.clone(),
                    value: raw_a.to_string(),
                })
            }
        };
        a.push(av);
        y.push(number(y_idx, &schema.y_column)?);
        let raw_s = rec.get(s_idx).unwrap_or("").to_string();
        let g = match label_index.get(&raw_s) {
            Some(&g) => g,
            None if fixed_labels => {
                return Err(Error::UnknownGroup {
                    row,
                    column: schema.s_column.clone(),
                    value: raw_s,
                })
            }
            None => {
                labels.push(raw_s.clone());
                if labels.len() > MAX_GROUPS {
                    return Err(Error::TooManyGroups {
                        column: schema.s_column.clone(),
                        count: labels.len(),
                        max: MAX_GROUPS,
                    });
                }
                label_index.insert(raw_s, labels.len() - 1);
                labels.len() - 1
            }
        };
        s.push(g);
    }
    if y.is_empty() {
        return Err(Error::EmptyFile);
    }
    let n = y.len();
    let mut ds = Dataset::new(
        Matrix::from_vec(n, p, xs)?,
        s,
        a,
        y,
        labels.len(),
        schema.x_columns.clone(),
    )?;
    ds.group_labels = labels;
    Ok(ds)
}

/// Simulator settings for the credit-lending data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p_s: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 3000,
            p_s: 0.5,
            noise_sd: 0.1,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("simulated sample count must be positive".into()));
        }
        if !(self.p_s > 0.0 && self.p_s < 1.0) {
            return Err(Error::Config(format!("p_s = {} outside (0, 1)", self.p_s)));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config(format!("noise_sd = {} is negative", self.noise_sd)));
        }
        Ok(())
    }
}

/// Ground-truth nuisance functions of the simulator. Features are laid out
/// as `[x_u, x_s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOracle {
    pub p_s: f64,
}

/// `E[sin(4 X_s - 2) | S = s]` with `X_s | S = s ~ U[s - 1, s]`.
fn mean_sin_given_group(s: usize) -> f64 {
    let (lo, hi) = (s as f64 - 1.0, s as f64);
    ((4.0 * lo - 2.0).cos() - (4.0 * hi - 2.0).cos()) / 4.0
}

impl SimOracle {
    pub fn mu0(&self, _x_u: f64, _x_s: f64, _s: usize) -> f64 {
        0.0
    }

    /// At exactly `x_u = 0.5` neither branch applies and the effect is 0.
    pub fn mu1(&self, x_u: f64, x_s: f64, s: usize) -> f64 {
        if x_u < 0.5 {
            (4.0 * x_s - 2.0).sin()
        } else if x_u > 0.5 {
            0.6 * s as f64 - 0.3
        } else {
            0.0
        }
    }

    pub fn propensity(&self, x_u: f64, x_s: f64, s: usize) -> f64 {
        sigmoid((2.0 * x_u).sin() + (2.0 * x_s).sin() + (2.0 * s as f64).sin())
    }

    pub fn ite(&self, x_u: f64, x_s: f64, s: usize) -> f64 {
        self.mu1(x_u, x_s, s) - self.mu0(x_u, x_s, s)
    }

    /// `E[ITE | X_u = x_u]`, averaging over `S` and `X_s | S`.
    pub fn ite_given_unprotected(&self, x_u: f64) -> f64 {
        let w = [1.0 - self.p_s, self.p_s];
        if x_u < 0.5 {
            w[0] * mean_sin_given_group(0) + w[1] * mean_sin_given_group(1)
        } else if x_u > 0.5 {
            w[0] * -0.3 + w[1] * 0.3
        } else {
            0.0
        }
    }

    /// Treat exactly when the individual effect is positive.
    pub fn optimal_policy(&self, x: &[f64], s: usize) -> f64 {
        f64::from(self.ite(x[0], x[1], s) > 0.0)
    }

    /// Best policy that reads only `x_u`, which is independent of `S` by
    /// construction: treat when the effect averaged over everything else is
    /// positive.
    pub fn action_fair_policy(&self, x: &[f64], _s: usize) -> f64 {
        f64::from(self.ite_given_unprotected(x[0]) > 0.0)
    }
}

pub fn sim_feature_names() -> Vec<String> {
    vec!["x_u".into(), "x_s".into()]
}

pub fn simulate(cfg: &SimConfig) -> Result<(Dataset, SimOracle)> {
    cfg.validate()?;
    let oracle = SimOracle { p_s: cfg.p_s };
    let mut rng = rng::stream(cfg.seed, tags::SIMULATE);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut x = Matrix::zeros(cfg.n, 2);
    let (mut s, mut a, mut y) = (Vec::with_capacity(cfg.n), Vec::with_capacity(cfg.n), Vec::with_capacity(cfg.n));
    for i in 0..cfg.n {
        let si = usize::from(rng.random::<f64>() < cfg.p_s);
        let x_u = rng.random_range(-1.0..=1.0);
        let x_s = rng.random_range(si as f64 - 1.0..=si as f64);
        let ai = u8::from(rng.random::<f64>() < oracle.propensity(x_u, x_s, si));
        let eps = noise.sample(&mut rng);
        let yi = if ai == 1 { oracle.mu1(x_u, x_s, si) } else { oracle.mu0(x_u, x_s, si) } + eps;
        x.set(i, 0, x_u);
        x.set(i, 1, x_s);
        s.push(si);
        a.push(ai);
        y.push(yi);
    }
    Ok((Dataset::new(x, s, a, y, 2, sim_feature_names())?, oracle))
}

/// Seeded disjoint partition into train, validation and test sets. Sizes are
/// `round(n * f)` for train and validation; test receives the remainder.
pub fn split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    if ft < 0.0 || fv < 0.0 || fs < 0.0 || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let n = ds.len();
    let n_train = ((n as f64) * ft).round() as usize;
    let n_val = (((n as f64) * fv).round() as usize).min(n - n_train.min(n));
    if n_train == 0 {
        return Err(Error::Config("training split is empty".into()));
    }
    let n_train = n_train.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, tags::SPLIT));
    let (train, rest) = idx.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    let sorted = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    };
    Ok((ds.subset(&sorted(train)), ds.subset(&sorted(val)), ds.subset(&sorted(test))))
}

/// Per-feature shift and scale fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Features with zero spread; these pass through unchanged.
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        Self::fit_matrix(&train.x)
    }

    pub fn fit_matrix(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::InvalidData("cannot standardize on an empty set".into()));
        }
        let n = x.rows() as f64;
        let (mut mean, mut sd, mut constant) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..x.cols() {
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n;
            let d = v.sqrt();
            let flat = !(d > 1e-12);
            mean.push(if flat { 0.0 } else { m });
            sd.push(if flat { 1.0 } else { d });
            constant.push(flat);
        }
        Ok(Self { mean, sd, constant })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            mean: vec![0.0; p],
            sd: vec![1.0; p],
            constant: vec![false; p],
        }
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform_matrix(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            let r = self.transform_row(x.row(i));
            out.row_mut(i).copy_from_slice(&r);
        }
        out
    }

    pub fn transform(&self, ds: &Dataset) -> Dataset {
        Dataset {
            x: self.transform_matrix(&ds.x),
            ..ds.clone()
        }
    }
}

/// Standardizes `train` and every set in `others` with the training
/// statistics.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Standardizer, Dataset, Vec<Dataset>)> {
    let st = Standardizer::fit(train)?;
    let t = st.transform(train);
    let o = others.iter().map(|d| st.transform(d)).collect();
    Ok((st, t, o))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(x: Vec<f64>, s: Vec<usize>) -> Dataset {
        let n = s.len();
        Dataset::new(Matrix::from_vec(n, 1, x).unwrap(), s, vec![0; n], vec![0.0; n], 2, vec!["x1".into()]).unwrap()
    }

    #[test]
    fn oracle_values() {
        let o = SimOracle { p_s: 0.5 };
        assert_eq!(o.propensity(0.0, 0.0, 0), 0.5);
        assert_eq!(o.mu0(0.3, -0.2, 1), 0.0);
        assert!((o.ite(0.75, 0.123, 1) - 0.3).abs() < 1e-15);
        assert!((o.ite(0.75, -0.5, 0) + 0.3).abs() < 1e-15);
        assert_eq!(o.mu1(0.5, 0.4, 1), 0.0);
    }

    #[test]
    fn oracle_consistency_at_random_points() {
        let o = SimOracle { p_s: 0.5 };
        let mut r = rng::stream(3, 0);
        for _ in 0..1000 {
            let (xu, xs, s) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), usize::from(r.random::<bool>()));
            assert!((o.ite(xu, xs, s) - (o.mu1(xu, xs, s) - o.mu0(xu, xs, s))).abs() <= 1e-12);
        }
    }

    #[test]
    fn unprotected_effect_matches_quadrature() {
        let o = SimOracle { p_s: 0.5 };
        let m = 200_000;
        let avg = |lo: f64| (0..m).map(|k| ((4.0 * (lo + (k as f64 + 0.5) / m as f64)) - 2.0).sin()).sum::<f64>() / m as f64;
        let expect = 0.5 * avg(-1.0) + 0.5 * avg(0.0);
        assert!((o.ite_given_unprotected(0.0) - expect).abs() < 1e-8);
        assert_eq!(o.ite_given_unprotected(0.9), 0.0);
    }

    #[test]
    fn simulated_support_and_rates() {
        let (ds, o) = simulate(&SimConfig { n: 10_000, seed: 11, ..Default::default() }).unwrap();
        for i in 0..ds.len() {
            let (xu, xs, s) = (ds.x.get(i, 0), ds.x.get(i, 1), ds.s[i] as f64);
            assert!((-1.0..=1.0).contains(&xu));
            assert!(s - 1.0 <= xs && xs <= s);
        }
        let n = ds.len() as f64;
        let p_hat = ds.s.iter().filter(|&&s| s == 1).count() as f64 / n;
        assert!((p_hat - 0.5).abs() <= 4.0 * (0.25 / n).sqrt());

        let props: Vec<f64> = (0..ds.len()).map(|i| o.propensity(ds.x.get(i, 0), ds.x.get(i, 1), ds.s[i])).collect();
        let mean_p = props.iter().sum::<f64>() / n;
        let var = props.iter().map(|p| p * (1.0 - p)).sum::<f64>() / n;
        let rate = ds.a.iter().map(|&a| a as f64).sum::<f64>() / n;
        assert!((rate - mean_p).abs() <= 4.0 * (var / n).sqrt());
    }

    #[test]
    fn untreated_outcomes_are_pure_noise() {
        let cfg = SimConfig { n: 4000, seed: 5, ..Default::default() };
        let (ds, _) = simulate(&cfg).unwrap();
        let y0: Vec<f64> = (0..ds.len()).filter(|&i| ds.a[i] == 0).map(|i| ds.y[i]).collect();
        let m = y0.iter().sum::<f64>() / y0.len() as f64;
        assert!(m.abs() <= 3.0 * cfg.noise_sd / (y0.len() as f64).sqrt());
    }

    #[test]
    fn simulate_is_deterministic() {
        let cfg = SimConfig { n: 50, seed: 9, ..Default::default() };
        assert_eq!(simulate(&cfg).unwrap().0, simulate(&cfg).unwrap().0);
        assert!(SimConfig { p_s: 1.0, ..cfg }.validate().is_err());
        assert!(SimConfig { noise_sd: -0.1, ..cfg }.validate().is_err());
    }

    #[test]
    fn csv_maps_groups_by_first_appearance() {
        let text = "x1,s,a,y\n1.0,F,0,0.5\n2.0,M,1,1.5\n3.0,F,1,-1\n4.0,M,0,2\n";
        let ds = read_csv(text.as_bytes(), &CsvSchema::new(&["x1"], "s", "a", "y")).unwrap();
        assert_eq!(ds.group_count, 2);
        assert_eq!(ds.group_labels, vec!["F", "M"]);
        assert_eq!(ds.s, vec![0, 1, 0, 1]);
        assert_eq!(ds.a, vec![0, 1, 1, 0]);
    }

    #[test]
    fn csv_errors_carry_location() {
        let schema = CsvSchema::new(&["x1"], "s", "a", "y");
        let mut text = String::from("x1,s,a,y\n");
        for r in 1..=8 {
            let a = if r == 7 { 2 } else { r % 2 };
            text.push_str(&format!("{r}.0,F,{a},0\n"));
        }
        match read_csv(text.as_bytes(), &schema) {
            Err(Error::NonBinaryAction { row, column, .. }) => assert_eq!((row, column.as_str()), (7, "a")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_csv("x1,s,a\n1,F,0\n".as_bytes(), &schema),
            Err(Error::MissingColumn { column }) if column == "y"
        ));
        assert!(matches!(
            read_csv("x1,s,a,y\n1,F,0,abc\n".as_bytes(), &schema),
            Err(Error::NonNumeric { row: 1, .. })
        ));
        assert!(matches!(read_csv("x1,s,a,y\n".as_bytes(), &schema), Err(Error::EmptyFile)));
        let many: String = (0..17).map(|g| format!("1,g{g},0,0\n")).collect();
        assert!(matches!(
            read_csv(format!("x1,s,a,y\n{many}").as_bytes(), &schema),
            Err(Error::TooManyGroups { count: 17, .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let (ds, _) = simulate(&SimConfig { n: 200, seed: 2, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let schema = CsvSchema::new(&["x_u", "x_s"], "s", "a", "y").with_group_labels(&["0", "1"]);
        let back = read_csv(buf.as_slice(), &schema).unwrap();
        assert_eq!(back.s, ds.s);
        assert_eq!(back.a, ds.a);
        for (u, v) in back.x.as_slice().iter().zip(ds.x.as_slice()).chain(back.y.iter().zip(&ds.y)) {
            assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let (ds, _) = simulate(&SimConfig { n: 3000, seed: 1, ..Default::default() }).unwrap();
        let (tr, va, te) = split(&ds, (0.8, 0.0, 0.2), 4).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (2400, 0, 600));
        let again = split(&ds, (0.8, 0.0, 0.2), 4).unwrap();
        assert_eq!(tr.row_ids, again.0.row_ids);
        let mut all: Vec<usize> = tr.row_ids.iter().chain(&va.row_ids).chain(&te.row_ids).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..3000).collect::<Vec<_>>());
        assert_eq!(ds.subset(&all), ds);

        let (tr, va, te) = split(&ds, (0.7, 0.1, 0.2), 4).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (2100, 300, 600));
        assert!(split(&ds, (0.0, 0.5, 0.5), 4).is_err());
        assert!(split(&ds, (0.5, 0.4, 0.2), 4).is_err());
    }

    #[test]
    fn standardize_uses_train_statistics() {
        let train = tiny(vec![3.0, 7.0, 3.0, 7.0], vec![0, 1, 0, 1]);
        let other = tiny(vec![7.0, 5.0], vec![1, 0]);
        let (st, t, o) = standardize(&train, &[&other]).unwrap();
        assert_eq!((st.mean[0], st.sd[0]), (5.0, 2.0));
        assert_eq!(o[0].x.as_slice(), &[1.0, 0.0]);
        let col = t.x.column(0);
        let m = col.iter().sum::<f64>() / 4.0;
        let sd = (col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        assert_eq!(o[0].s, other.s);

        let flat = tiny(vec![2.5; 4], vec![0, 1, 0, 1]);
        let st = Standardizer::fit(&flat).unwrap();
        assert!(st.constant[0]);
        assert_eq!(st.transform(&flat).x, flat.x);
    }
}
