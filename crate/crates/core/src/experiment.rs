//! End-to-end experiment pipeline: data, split, nuisances, optional fair
//! representation, policy learning and test-set evaluation, plus seeded
//! random grid search over hyperparameters.
//!
//! Configurations are flat `key = value` text with dotted section names.
//! Blank lines and lines starting with `#` are ignored.
//!
//! | key | meaning |
//! |-----|---------|
//! | `id` | name written to every result row |
//! | `data.source` | `simulate` or `csv` |
//! | `data.n`, `data.p_s`, `data.noise_sd`, `data.seed` | simulator settings |
//! | `data.path`, `data.x_columns`, `data.s_column`, `data.a_column`, `data.y_column`, `data.group_labels` | CSV input |
//! | `split.train`, `split.val`, `split.test` | split fractions |
//! | `nuisance.mode` | `oracle` or `fitted` |
//! | `nuisance.clip` | propensity clip bound |
//! | `fairness.action_fair`, `fairness.gamma` | representation step and its weight |
//! | `fairness.value`, `fairness.lambda` | `none`, `envy_free` or `max_min`; envy weight |
//! | `rep.rep_dim`, `rep.size` | representation width (`size` sets width and hidden width) |
//! | `policy.method` | `dm`, `ipw` or `dr` |
//! | `run.seeds` | comma-separated seeds or a range `a..b` |
//! | `run.timing` | record wall time per seed |
//! | `eval.n_mc`, `eval.probes` | Monte Carlo draws for the action-fairness gap; paired probes |
//!
//! Network sections `nuisance.`, `rep.` and `policy.` (or `all.` for every
//! network) accept `hidden`, `hidden_layers`, `dropout`, `learning_rate`,
//! `weight_decay`, `batch_size` and `epochs`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, simulate, split, standardize, CsvSchema, Dataset, SimConfig, SimOracle, Standardizer};
use crate::error::{Error, Result};
use crate::fairrep::{train_fair_representation, FairRepHyper, FairRepModel, RepTrainReport};
use crate::metrics::{action_fairness_gap_sim, group_sensitivity, spearman_rank};
use crate::nn::NetHyper;
use crate::nuisance::{
    fit_outcome_model, fit_propensity, fitted_nuisance, oracle_nuisance, NuisanceEstimates, DEFAULT_CLIP,
};
use crate::policy::{evaluate_policy, train_policy, FrontEnd, Objective, PolicyTrainReport, TrainedPolicy};
use crate::rng::{self, tags};
use crate::scores::{self, conditional_values, ScoreMethod, ValueReport};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Simulate(SimConfig),
    Csv { path: PathBuf, schema: CsvSchema },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMode {
    Oracle,
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueFairness {
    None,
    EnvyFree,
    MaxMin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub data: DataSource,
    pub split: (f64, f64, f64),
    pub nuisance: NuisanceMode,
    pub nuisance_net: NetHyper,
    pub clip: f64,
    pub action_fair: bool,
    pub rep: FairRepHyper,
    pub value_fairness: ValueFairness,
    pub lambda: f64,
    pub method: ScoreMethod,
    pub policy_net: NetHyper,
    pub seeds: Vec<u64>,
    pub n_mc: usize,
    pub probes: usize,
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile("sim").expect("built-in profile")
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {v:?} for {key}"))),
    }
}

fn parse_list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

/// Parses `0,1,4` or `0..5`.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = v.split_once("..") {
        let (a, b): (u64, u64) = (parse("seeds", a.trim())?, parse("seeds", b.trim())?);
        if b <= a {
            return Err(Error::Config(format!("empty seed range {v:?}")));
        }
        return Ok((a..b).collect());
    }
    let seeds = parse_list(v).iter().map(|s| parse("seeds", s)).collect::<Result<Vec<u64>>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    Ok(seeds)
}

fn set_net(net: &mut NetHyper, field: &str, key: &str, v: &str) -> Result<()> {
    match field {
        "hidden" => net.hidden = parse(key, v)?,
        "hidden_layers" => net.hidden_layers = parse(key, v)?,
        "dropout" => net.dropout = parse(key, v)?,
        "learning_rate" | "lr" => net.learning_rate = parse(key, v)?,
        "weight_decay" => net.weight_decay = parse(key, v)?,
        "batch_size" => net.batch_size = parse(key, v)?,
        "epochs" => net.epochs = parse(key, v)?,
        _ => return Err(Error::Config(format!("unknown key {key}"))),
    }
    Ok(())
}

fn net_lines(out: &mut String, section: &str, n: &NetHyper) {
    let _ = writeln!(out, "{section}.hidden = {}", n.hidden);
    let _ = writeln!(out, "{section}.hidden_layers = {}", n.hidden_layers);
    let _ = writeln!(out, "{section}.dropout = {}", n.dropout);
    let _ = writeln!(out, "{section}.learning_rate = {}", n.learning_rate);
    let _ = writeln!(out, "{section}.weight_decay = {}", n.weight_decay);
    let _ = writeln!(out, "{section}.batch_size = {}", n.batch_size);
    let _ = writeln!(out, "{section}.epochs = {}", n.epochs);
}

impl ExperimentConfig {
    /// `sim`: simulated data, 80/20 split, oracle nuisances, DM, action
    /// fairness with gamma 0.5, envy weight 0.5, seeds 0..5.
    /// `csv`: CSV data, 70/10/20 split, fitted nuisances, DR, action fairness
    /// with envy-free value fairness at weight 0.3.
    pub fn profile(name: &str) -> Result<Self> {
        let sim = Self {
            id: "sim".into(),
            data: DataSource::Simulate(SimConfig::default()),
            split: (0.8, 0.0, 0.2),
            nuisance: NuisanceMode::Oracle,
            nuisance_net: NetHyper { epochs: 200, ..NetHyper::default() },
            clip: DEFAULT_CLIP,
            action_fair: true,
            rep: FairRepHyper::default(),
            value_fairness: ValueFairness::None,
            lambda: 0.5,
            method: ScoreMethod::Dm,
            policy_net: NetHyper::default(),
            seeds: (0..5).collect(),
            n_mc: 10_000,
            probes: 100,
            timing: false,
        };
        match name {
            "sim" => Ok(sim),
            "csv" => Ok(Self {
                id: "csv".into(),
                data: DataSource::Csv {
                    path: PathBuf::from("data.csv"),
                    schema: CsvSchema::new(&["x"], "s", "a", "y"),
                },
                split: (0.7, 0.1, 0.2),
                nuisance: NuisanceMode::Fitted,
                value_fairness: ValueFairness::EnvyFree,
                lambda: 0.3,
                method: ScoreMethod::Dr,
                policy_net: NetHyper { epochs: 300, ..NetHyper::default() },
                ..sim
            }),
            _ => Err(Error::Config(format!("unknown profile {name:?} (expected sim or csv)"))),
        }
    }

    pub fn objective(&self) -> Objective {
        match self.value_fairness {
            ValueFairness::None => Objective::Unrestricted,
            ValueFairness::EnvyFree => Objective::EnvyFree(self.lambda),
            ValueFairness::MaxMin => Objective::MaxMin,
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        match (section, field) {
            ("", "id") => self.id = v.to_string(),
            ("data", "source") => match v {
                "simulate" | "sim" => {
                    if !matches!(self.data, DataSource::Simulate(_)) {
                        self.data = DataSource::Simulate(SimConfig::default());
                    }
                }
                "csv" => {
                    if !matches!(self.data, DataSource::Csv { .. }) {
                        self.data = DataSource::Csv {
                            path: PathBuf::from("data.csv"),
                            schema: CsvSchema::new(&["x"], "s", "a", "y"),
                        };
                    }
                }
                _ => return Err(Error::Config(format!("unknown data source {v:?}"))),
            },
            ("data", f @ ("n" | "p_s" | "noise_sd" | "seed")) => {
                let DataSource::Simulate(sim) = &mut self.data else {
                    return Err(Error::Config(format!("{key} requires data.source = simulate")));
                };
                match f {
                    "n" => sim.n = parse(key, v)?,
                    "p_s" => sim.p_s = parse(key, v)?,
                    "noise_sd" => sim.noise_sd = parse(key, v)?,
                    _ => sim.seed = parse(key, v)?,
                }
            }
            ("data", f) => {
                let DataSource::Csv { path, schema } = &mut self.data else {
                    return Err(Error::Config(format!("{key} requires data.source = csv")));
                };
                match f {
                    "path" => *path = PathBuf::from(v),
                    "x_columns" => schema.x_columns = parse_list(v),
                    "s_column" => schema.s_column = v.to_string(),
                    "a_column" => schema.a_column = v.to_string(),
                    "y_column" => schema.y_column = v.to_string(),
                    "group_labels" => schema.group_labels = Some(parse_list(v)),
                    _ => return Err(Error::Config(format!("unknown key {key}"))),
                }
            }
            ("split", "train") => self.split.0 = parse(key, v)?,
            ("split", "val") => self.split.1 = parse(key, v)?,
            ("split", "test") => self.split.2 = parse(key, v)?,
            ("nuisance", "mode") => {
                self.nuisance = match v {
                    "oracle" => NuisanceMode::Oracle,
                    "fitted" => NuisanceMode::Fitted,
                    _ => return Err(Error::Config(format!("unknown nuisance mode {v:?}"))),
                }
            }
            ("nuisance", "clip") => self.clip = parse(key, v)?,
            ("nuisance", f) => set_net(&mut self.nuisance_net, f, key, v)?,
            ("fairness", "action_fair") => self.action_fair = parse_bool(key, v)?,
            ("fairness", "gamma") => self.rep.gamma = parse(key, v)?,
            ("fairness", "value") => {
                self.value_fairness = match v.replace('-', "_").as_str() {
                    "none" | "unrestricted" => ValueFairness::None,
                    "envy_free" => ValueFairness::EnvyFree,
                    "max_min" | "maxmin" => ValueFairness::MaxMin,
                    _ => return Err(Error::Config(format!("unknown value fairness {v:?}"))),
                }
            }
            ("fairness", "lambda") => self.lambda = parse(key, v)?,
            ("rep", "rep_dim") => self.rep.rep_dim = parse(key, v)?,
            ("rep", "size") => {
                self.rep.rep_dim = parse(key, v)?;
                self.rep.net.hidden = self.rep.rep_dim;
            }
            ("rep", f) => set_net(&mut self.rep.net, f, key, v)?,
            ("policy", "method") => self.method = parse(key, v)?,
            ("policy", f) => set_net(&mut self.policy_net, f, key, v)?,
            ("all", f) => {
                set_net(&mut self.nuisance_net, f, key, v)?;
                set_net(&mut self.rep.net, f, key, v)?;
                set_net(&mut self.policy_net, f, key, v)?;
            }
            ("run", "seeds") => self.seeds = parse_seeds(v)?,
            ("run", "timing") => self.timing = parse_bool(key, v)?,
            ("eval", "n_mc") => self.n_mc = parse(key, v)?,
            ("eval", "probes") => self.probes = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Starts from the profile named by a `profile = ...` line (default
    /// `sim`) and applies the remaining lines.
    pub fn from_text(text: &str) -> Result<Self> {
        let profile = text
            .lines()
            .filter_map(|l| l.trim().split_once('='))
            .find(|(k, _)| k.trim() == "profile")
            .map(|(_, v)| v.trim().to_string())
            .unwrap_or_else(|| "sim".into());
        let mut cfg = Self::profile(&profile)?;
        let rest: String = text
            .lines()
            .filter(|l| l.trim().split_once('=').is_none_or(|(k, _)| k.trim() != "profile"))
            .map(|l| format!("{l}\n"))
            .collect();
        cfg.apply_text(&rest)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; [`ExperimentConfig::from_text`] reads it back.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "id = {}", self.id);
        match &self.data {
            DataSource::Simulate(s) => {
                let _ = writeln!(o, "data.source = simulate");
                let _ = writeln!(o, "data.n = {}", s.n);
                let _ = writeln!(o, "data.p_s = {}", s.p_s);
                let _ = writeln!(o, "data.noise_sd = {}", s.noise_sd);
                let _ = writeln!(o, "data.seed = {}", s.seed);
            }
            DataSource::Csv { path, schema } => {
                let _ = writeln!(o, "data.source = csv");
                let _ = writeln!(o, "data.path = {}", path.display());
                let _ = writeln!(o, "data.x_columns = {}", schema.x_columns.join(","));
                let _ = writeln!(o, "data.s_column = {}", schema.s_column);
                let _ = writeln!(o, "data.a_column = {}", schema.a_column);
                let _ = writeln!(o, "data.y_column = {}", schema.y_column);
                if let Some(l) = &schema.group_labels {
                    let _ = writeln!(o, "data.group_labels = {}", l.join(","));
                }
            }
        }
        let _ = writeln!(o, "split.train = {}", self.split.0);
        let _ = writeln!(o, "split.val = {}", self.split.1);
        let _ = writeln!(o, "split.test = {}", self.split.2);
        let mode = match self.nuisance {
            NuisanceMode::Oracle => "oracle",
            NuisanceMode::Fitted => "fitted",
        };
        let _ = writeln!(o, "nuisance.mode = {mode}");
        let _ = writeln!(o, "nuisance.clip = {}", self.clip);
        net_lines(&mut o, "nuisance", &self.nuisance_net);
        let _ = writeln!(o, "fairness.action_fair = {}", self.action_fair);
        let _ = writeln!(o, "fairness.gamma = {}", self.rep.gamma);
        let value = match self.value_fairness {
            ValueFairness::None => "none",
            ValueFairness::EnvyFree => "envy_free",
            ValueFairness::MaxMin => "max_min",
        };
        let _ = writeln!(o, "fairness.value = {value}");
        let _ = writeln!(o, "fairness.lambda = {}", self.lambda);
        let _ = writeln!(o, "rep.rep_dim = {}", self.rep.rep_dim);
        net_lines(&mut o, "rep", &self.rep.net);
        let _ = writeln!(o, "policy.method = {}", self.method.name());
        net_lines(&mut o, "policy", &self.policy_net);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(o, "run.seeds = {}", seeds.join(","));
        let _ = writeln!(o, "run.timing = {}", self.timing);
        let _ = writeln!(o, "eval.n_mc = {}", self.n_mc);
        let _ = writeln!(o, "eval.probes = {}", self.probes);
        o
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Simulate(s) = &self.data {
            s.validate()?;
        } else if self.nuisance == NuisanceMode::Oracle {
            return Err(Error::Config("oracle nuisances require simulated data".into()));
        }
        if !(self.lambda >= 0.0) || !(self.rep.gamma >= 0.0) {
            return Err(Error::Config("lambda and gamma must be non-negative".into()));
        }
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(Error::Config(format!("clip bound {} outside (0, 0.5)", self.clip)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        if self.n_mc == 0 {
            return Err(Error::Config("eval.n_mc must be positive".into()));
        }
        self.nuisance_net.validate()?;
        self.rep.net.validate()?;
        self.policy_net.validate()
    }
}

/// One completed seed of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_id: String,
    pub seed: u64,
    pub method: ScoreMethod,
    pub objective: String,
    pub v_hat: f64,
    pub v_hat_by_group: Vec<f64>,
    /// Action-fairness gap on simulated data, Spearman correlation between
    /// group and policy output on CSV data.
    pub af_gap_or_spearman: f64,
    pub wall_ms: u64,
}

/// Splits, nuisances and standardization for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub raw: [Dataset; 3],
    pub std: [Dataset; 3],
    pub scaler: Standardizer,
    pub nuis: [NuisanceEstimates; 3],
    pub oracle: Option<(SimConfig, SimOracle)>,
    /// Validation outcome MSE and propensity log-loss of fitted nuisances.
    pub nuisance_val: Option<(f64, f64)>,
}

pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Option<(SimConfig, SimOracle)>)> {
    match &cfg.data {
        DataSource::Simulate(sim) => {
            let sim = SimConfig { seed: sim.seed.wrapping_add(seed), ..*sim };
            let (ds, oracle) = simulate(&sim)?;
            Ok((ds, Some((sim, oracle))))
        }
        DataSource::Csv { path, schema } => Ok((load_csv(path, schema)?, None)),
    }
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    cfg.validate()?;
    let (ds, oracle) = load_data(cfg, seed)?;
    let (train, val, test) = split(&ds, cfg.split, seed)?;
    let (scaler, train_std, others) = standardize(&train, &[&val, &test])?;
    let [val_std, test_std]: [Dataset; 2] = others.try_into().map_err(|_| Error::Shape("split count".into()))?;
    let (nuis, nuisance_val) = match cfg.nuisance {
        NuisanceMode::Oracle => {
            let (_, o) = oracle.as_ref().ok_or_else(|| Error::Config("oracle nuisances require simulated data".into()))?;
            ([oracle_nuisance(&train, o), oracle_nuisance(&val, o), oracle_nuisance(&test, o)], None)
        }
        NuisanceMode::Fitted => {
            let outcome = fit_outcome_model(&train_std, &cfg.nuisance_net, seed)?;
            let prop = fit_propensity(&train_std, &cfg.nuisance_net, cfg.clip, seed)?;
            let nv = if val_std.is_empty() {
                None
            } else {
                Some((outcome.factual_mse(&val_std)?, prop.log_loss(&val_std)?))
            };
            (
                [
                    fitted_nuisance(&train_std, &outcome, &prop)?,
                    fitted_nuisance(&val_std, &outcome, &prop)?,
                    fitted_nuisance(&test_std, &outcome, &prop)?,
                ],
                nv,
            )
        }
    };
    Ok(Prepared {
        raw: [train, val, test],
        std: [train_std, val_std, test_std],
        scaler,
        nuis,
        oracle,
        nuisance_val,
    })
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub row: ResultRow,
    pub policy: TrainedPolicy,
    pub policy_report: PolicyTrainReport,
    pub representation: Option<(FairRepModel, RepTrainReport)>,
    pub test_report: ValueReport,
    /// Test values of the ground-truth optimal and best action-fair policies
    /// (simulated data only).
    pub oracle_optimal: Option<ValueReport>,
    pub oracle_action_fair: Option<ValueReport>,
    /// Largest output change when only the group input changes, over paired
    /// probes (group-blind policies only).
    pub group_sensitivity: Option<f64>,
    pub nuisance_val: Option<(f64, f64)>,
    pub warnings: Vec<String>,
}

fn oracle_values(
    policy: impl Fn(&[f64], usize) -> f64,
    raw: &Dataset,
    nuis: &NuisanceEstimates,
    method: ScoreMethod,
) -> Result<ValueReport> {
    let pi: Vec<f64> = (0..raw.len()).map(|i| policy(raw.x.row(i), raw.s[i])).collect();
    conditional_values(&scores::score(method, &pi, raw, nuis)?, &raw.s, raw.group_count)
}

/// Trains the representation, if any, and the policy on `prep`.
pub fn fit_policy(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    seed: u64,
) -> Result<(TrainedPolicy, PolicyTrainReport, Option<(FairRepModel, RepTrainReport)>)> {
    let [train, val, _] = &prep.std;
    let [train_nuis, val_nuis, _] = &prep.nuis;
    let representation = if cfg.action_fair {
        Some(train_fair_representation(train, val, &cfg.rep, seed)?)
    } else {
        None
    };
    let front_end = match &representation {
        Some((m, _)) => FrontEnd::Representation(m.standardized_phi(&train.x)?),
        None => FrontEnd::Raw,
    };
    let (policy, report) = train_policy(
        train,
        train_nuis,
        Some((val, val_nuis)),
        front_end,
        cfg.objective(),
        cfg.method,
        &cfg.policy_net,
        seed,
    )?;
    Ok((policy.with_scaler(prep.scaler.clone()), report, representation))
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let start = Instant::now();
    let prep = prepare(cfg, seed)?;
    let (policy, policy_report, representation) = fit_policy(cfg, &prep, seed)?;
    let test = &prep.std[2];
    let test_raw = &prep.raw[2];
    let test_nuis = &prep.nuis[2];
    let test_report = evaluate_policy(&policy, test, test_nuis, cfg.method)?;

    let mut warnings = Vec::new();
    if policy_report.missing_group_steps > 0 {
        warnings.push(format!(
            "{} policy minibatches lacked a group",
            policy_report.missing_group_steps
        ));
    }
    let (metric, oracle_optimal, oracle_action_fair) = match &prep.oracle {
        Some((sim, o)) => (
            action_fairness_gap_sim(&policy, sim, cfg.n_mc, seed)?,
            Some(oracle_values(|x, s| o.optimal_policy(x, s), test_raw, test_nuis, cfg.method)?),
            Some(oracle_values(|x, s| o.action_fair_policy(x, s), test_raw, test_nuis, cfg.method)?),
        ),
        None => {
            let s: Vec<f64> = test.s.iter().map(|&g| g as f64).collect();
            let r = spearman_rank(&s, &policy.outputs(test)?).unwrap_or_else(|e| {
                warnings.push(format!("spearman: {e}"));
                f64::NAN
            });
            (r, None, None)
        }
    };
    let group_sens = policy.front_end.is_group_blind().then(|| {
        let k = cfg.probes.min(test_raw.len());
        group_sensitivity(&policy, (0..k).map(|i| test_raw.x.row(i)), test_raw.group_count)
    });

    let wall_ms = if cfg.timing { start.elapsed().as_millis() as u64 } else { 0 };
    let row = ResultRow {
        config_id: cfg.id.clone(),
        seed,
        method: cfg.method,
        objective: cfg.objective().name(),
        v_hat: test_report.v_hat,
        v_hat_by_group: test_report.v_hat_by_group.clone(),
        af_gap_or_spearman: metric,
        wall_ms,
    };
    Ok(SeedRun {
        row,
        policy,
        policy_report,
        representation,
        test_report,
        oracle_optimal,
        oracle_action_fair,
        group_sensitivity: group_sens,
        nuisance_val: prep.nuisance_val,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<SeedFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; absent for a single row.
    pub sd: Option<f64>,
}

impl Stat {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_id: String,
    pub seeds_completed: usize,
    pub seeds_failed: usize,
    pub v_hat: Option<Stat>,
    pub v_hat_by_group: Vec<Stat>,
    pub af_gap_or_spearman: Option<Stat>,
    pub failures: Vec<SeedFailure>,
}

impl ResultsTable {
    pub fn group_count(&self) -> usize {
        self.rows.iter().map(|r| r.v_hat_by_group.len()).max().unwrap_or(0)
    }

    /// Columns `config_id, seed, method, objective, v_hat, v_hat_s0, ...,
    /// af_gap_or_spearman, wall_ms`, rows in the order given.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let g = self.group_count();
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["config_id", "seed", "method", "objective", "v_hat"].map(String::from).to_vec();
        header.extend((0..g).map(|k| format!("v_hat_s{k}")));
        header.extend(["af_gap_or_spearman".to_string(), "wall_ms".to_string()]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.config_id.clone(),
                r.seed.to_string(),
                r.method.name().to_string(),
                r.objective.clone(),
                r.v_hat.to_string(),
            ];
            rec.extend((0..g).map(|k| r.v_hat_by_group.get(k).map(f64::to_string).unwrap_or_default()));
            rec.extend([r.af_gap_or_spearman.to_string(), r.wall_ms.to_string()]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self, config_id: &str) -> Summary {
        let col = |f: &dyn Fn(&ResultRow) -> f64| -> Option<Stat> {
            let v: Vec<f64> = self.rows.iter().map(f).collect();
            (!v.is_empty()).then(|| Stat::of(&v))
        };
        Summary {
            config_id: config_id.to_string(),
            seeds_completed: self.rows.len(),
            seeds_failed: self.failures.len(),
            v_hat: col(&|r| r.v_hat),
            v_hat_by_group: (0..self.group_count())
                .filter_map(|k| col(&|r| r.v_hat_by_group.get(k).copied().unwrap_or(f64::NAN)))
                .collect(),
            af_gap_or_spearman: col(&|r| r.af_gap_or_spearman),
            failures: self.failures.clone(),
        }
    }
}

/// Runs every configured seed in order; a failing seed is recorded and the
/// others continue.
pub fn run_experiment(cfg: &ExperimentConfig) -> (ResultsTable, Vec<SeedRun>) {
    let mut table = ResultsTable::default();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        match run_seed(cfg, seed) {
            Ok(run) => {
                table.rows.push(run.row.clone());
                runs.push(run);
            }
            Err(e) => table.failures.push(SeedFailure { seed, error: e.to_string() }),
        }
    }
    (table, runs)
}

/// Discrete hyperparameter grid: each axis is a config key and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<(String, Vec<String>)>,
}

impl GridSpec {
    /// Lines of `key = v1, v2, ...`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("grid line {}: expected key = values", lineno + 1)))?;
            let values = parse_list(v);
            if values.is_empty() {
                return Err(Error::Config(format!("grid line {}: no values", lineno + 1)));
            }
            axes.push((k.trim().to_string(), values));
        }
        if axes.is_empty() {
            return Err(Error::Config("empty grid".into()));
        }
        Ok(Self { axes })
    }

    fn axis(k: &str, v: &[&str]) -> (String, Vec<String>) {
        (k.to_string(), v.iter().map(|s| s.to_string()).collect())
    }

    /// Tuning ranges for simulated data.
    pub fn simulated() -> Self {
        Self {
            axes: vec![
                Self::axis("all.dropout", &["0", "0.1", "0.2"]),
                Self::axis("all.batch_size", &["32", "64", "128"]),
                Self::axis("rep.learning_rate", &["0.0001", "0.0005", "0.001", "0.005"]),
                Self::axis("rep.size", &["2", "5", "10"]),
                Self::axis("rep.weight_decay", &["0", "0.001"]),
                Self::axis("policy.learning_rate", &["0.00005", "0.0001", "0.0005", "0.001"]),
                Self::axis("policy.hidden", &["5", "10", "15", "20"]),
            ],
        }
    }

    /// Tuning ranges for real-world data.
    pub fn observational() -> Self {
        Self {
            axes: vec![
                Self::axis("all.dropout", &["0", "0.1", "0.2", "0.3"]),
                Self::axis("all.batch_size", &["32", "64", "128"]),
                Self::axis("nuisance.learning_rate", &["0.0001", "0.0005", "0.001", "0.005"]),
                Self::axis("nuisance.hidden", &["5", "10", "20", "30"]),
                Self::axis("rep.learning_rate", &["0.0001", "0.0005", "0.001", "0.005"]),
                Self::axis("rep.size", &["2", "5", "10"]),
                Self::axis("rep.weight_decay", &["0", "0.001"]),
                Self::axis("policy.learning_rate", &["0.00005", "0.0001", "0.0005", "0.001"]),
                Self::axis("policy.hidden", &["5", "10", "15", "20"]),
            ],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "sim" => Ok(Self::simulated()),
            "real" => Ok(Self::observational()),
            _ => Err(Error::Config(format!("unknown grid preset {name:?}"))),
        }
    }

    pub fn size(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// Overrides of the `index`-th grid point, the last axis varying fastest.
    pub fn point(&self, mut index: usize) -> Vec<(String, String)> {
        let mut out = vec![(String::new(), String::new()); self.axes.len()];
        for (k, (key, vals)) in self.axes.iter().enumerate().rev() {
            out[k] = (key.clone(), vals[index % vals.len()].clone());
            index /= vals.len();
        }
        out
    }
}

/// What a grid search optimizes on the validation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridTarget {
    /// Final validation policy objective (maximized).
    Policy,
    /// Validation outcome MSE of the representation's outcome head (minimized).
    Representation,
    /// Validation factual MSE of the fitted outcome model (minimized).
    Outcome,
    /// Validation log-loss of the fitted propensity model (minimized).
    Propensity,
}

impl GridTarget {
    pub fn maximize(self) -> bool {
        self == GridTarget::Policy
    }
}

impl FromStr for GridTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "policy" => Ok(Self::Policy),
            "representation" | "rep" => Ok(Self::Representation),
            "outcome" => Ok(Self::Outcome),
            "propensity" => Ok(Self::Propensity),
            _ => Err(Error::Config(format!("unknown grid target {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTrial {
    pub trial: usize,
    pub grid_index: usize,
    pub overrides: Vec<(String, String)>,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub target: GridTarget,
    pub trials: Vec<GridTrial>,
    pub best: Option<usize>,
    pub warnings: Vec<String>,
}

impl GridSearchResult {
    pub fn best_trial(&self) -> Option<&GridTrial> {
        self.best.map(|b| &self.trials[b])
    }
}

/// Grid indices of `budget` distinct points drawn uniformly, plus a warning
/// when the budget had to be clamped to the grid size.
pub fn sample_grid(spec: &GridSpec, budget: usize, seed: u64) -> (Vec<usize>, Option<String>) {
    let size = spec.size();
    let (budget, warning) = if budget > size {
        (size, Some(format!("budget {budget} exceeds grid size {size}; clamped")))
    } else {
        (budget, None)
    };
    let mut rng = rng::stream(seed, tags::GRID);
    (rand::seq::index::sample(&mut rng, size, budget).into_vec(), warning)
}

/// Applies `overrides` to `base` and scores the result on the validation split.
pub fn evaluate_trial(base: &ExperimentConfig, overrides: &[(String, String)], target: GridTarget, seed: u64) -> Result<f64> {
    let mut cfg = base.clone();
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    if cfg.split.1 <= 0.0 {
        return Err(Error::Config("grid search needs a validation split".into()));
    }
    let prep = prepare(&cfg, seed)?;
    match target {
        GridTarget::Outcome | GridTarget::Propensity => {
            let (mse, ll) = prep
                .nuisance_val
                .ok_or_else(|| Error::Config("nuisance targets need fitted nuisances and a validation split".into()))?;
            Ok(if target == GridTarget::Outcome { mse } else { ll })
        }
        GridTarget::Representation => {
            let (_, rep) = train_fair_representation(&prep.std[0], &prep.std[1], &cfg.rep, seed)?;
            Ok(rep.outcome_mse)
        }
        GridTarget::Policy => {
            let (_, rep, _) = fit_policy(&cfg, &prep, seed)?;
            rep.val_objective.last().copied().ok_or_else(|| Error::Config("no policy epochs".into()))
        }
    }
}

/// Best finite-scoring trial; the earliest trial wins ties.
pub fn select_best(trials: &[GridTrial], target: GridTarget) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in trials.iter().enumerate() {
        let Some(s) = t.score.filter(|s| s.is_finite()) else { continue };
        let better = match best {
            None => true,
            Some((_, b)) => {
                if target.maximize() {
                    s > b
                } else {
                    s < b
                }
            }
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

pub fn assemble_grid_result(
    spec: &GridSpec,
    indices: &[usize],
    scores: Vec<Result<f64>>,
    target: GridTarget,
    warning: Option<String>,
) -> GridSearchResult {
    let trials: Vec<GridTrial> = indices
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(trial, (&grid_index, r))| {
            let (score, error) = match r {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            GridTrial { trial, grid_index, overrides: spec.point(grid_index), score, error }
        })
        .collect();
    let best = select_best(&trials, target);
    GridSearchResult { target, trials, best, warnings: warning.into_iter().collect() }
}

/// Sequential random grid search.
pub fn grid_search(
    base: &ExperimentConfig,
    spec: &GridSpec,
    budget: usize,
    target: GridTarget,
    seed: u64,
) -> GridSearchResult {
    let (indices, warning) = sample_grid(spec, budget, seed);
    let scores = indices
        .iter()
        .map(|&i| evaluate_trial(base, &spec.point(i), target, seed))
        .collect();
    assemble_grid_result(spec, &indices, scores, target, warning)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::profile("sim").unwrap();
        cfg.apply_text(
            "data.n = 300\nall.epochs = 3\nrun.seeds = 0,1\neval.n_mc = 200\nsplit.train = 0.6\nsplit.val = 0.2\nsplit.test = 0.2\n",
        )
        .unwrap();
        cfg
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = tiny();
        cfg.value_fairness = ValueFairness::MaxMin;
        cfg.timing = true;
        let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        let csv = ExperimentConfig::profile("csv").unwrap();
        let text = format!("profile = csv\n{}", csv.to_text());
        assert_eq!(ExperimentConfig::from_text(&text).unwrap(), csv);
    }

    #[test]
    fn config_errors() {
        let mut cfg = tiny();
        assert!(cfg.set("policy.nope", "1").is_err());
        assert!(cfg.set("data.path", "x.csv").is_err());
        assert!(cfg.set("fairness.gamma", "abc").is_err());
        assert!(ExperimentConfig::from_text("data.source = csv\nnuisance.mode = oracle\n").is_err());
        assert!(ExperimentConfig::from_text("just words\n").is_err());
        assert_eq!(parse_seeds("2..5").unwrap(), vec![2, 3, 4]);
        assert!(parse_seeds("5..2").is_err());
    }

    #[test]
    fn profiles() {
        let sim = ExperimentConfig::profile("sim").unwrap();
        assert_eq!(sim.split, (0.8, 0.0, 0.2));
        assert_eq!(sim.rep.gamma, 0.5);
        assert_eq!(sim.lambda, 0.5);
        assert_eq!(sim.seeds.len(), 5);
        let csv = ExperimentConfig::profile("csv").unwrap();
        assert_eq!(csv.objective(), Objective::EnvyFree(0.3));
        assert_eq!(csv.method, ScoreMethod::Dr);
        assert_eq!(csv.split, (0.7, 0.1, 0.2));
        assert!(ExperimentConfig::profile("other").is_err());
    }

    #[test]
    fn seed_runs_are_deterministic_and_blind() {
        let cfg = tiny();
        let (a, runs) = run_experiment(&cfg);
        let (b, _) = run_experiment(&cfg);
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 2);
        for r in &runs {
            assert_eq!(r.group_sensitivity, Some(0.0));
            assert_eq!(r.policy_report.train_objective.len(), 3);
        }
        let mut out = Vec::new();
        a.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("config_id,seed,method,objective,v_hat,v_hat_s0,v_hat_s1,af_gap_or_spearman,wall_ms\n"));
        assert!(text.lines().nth(1).unwrap().ends_with(",0"));
    }

    #[test]
    fn failing_seed_is_recorded() {
        let mut cfg = tiny();
        cfg.policy_net.learning_rate = f64::NAN;
        let (t, _) = run_experiment(&cfg);
        assert!(t.rows.is_empty());
        assert_eq!(t.failures.len(), 2);
    }

    #[test]
    fn summary_uses_sample_sd() {
        let row = |v: f64| ResultRow {
            config_id: "c".into(),
            seed: 0,
            method: ScoreMethod::Dm,
            objective: "unrestricted".into(),
            v_hat: v,
            v_hat_by_group: vec![v, 2.0 * v],
            af_gap_or_spearman: 0.0,
            wall_ms: 0,
        };
        let t = ResultsTable { rows: vec![row(1.0), row(2.0), row(3.0)], failures: vec![] };
        let s = t.summary("c");
        let v = s.v_hat.unwrap();
        assert_eq!(v.mean, 2.0);
        assert!((v.sd.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s.v_hat_by_group[1].mean, 4.0);
        assert_eq!(Stat::of(&[5.0]).sd, None);
    }

    #[test]
    fn grid_sampling() {
        let spec = GridSpec::simulated();
        assert_eq!(spec.size(), 3 * 3 * 4 * 3 * 2 * 4 * 4);
        let (idx, warn) = sample_grid(&spec, 30, 1);
        assert_eq!(idx.len(), 30);
        assert!(warn.is_none());
        let mut d = idx.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 30);
        assert_eq!(sample_grid(&spec, 30, 1).0, idx);
        let one = GridSpec::parse("policy.hidden = 7\n").unwrap();
        let (idx, warn) = sample_grid(&one, 5, 0);
        assert_eq!(idx, vec![0]);
        assert!(warn.is_some());
        assert_eq!(one.point(0), vec![("policy.hidden".to_string(), "7".to_string())]);
    }

    #[test]
    fn grid_tie_goes_to_earliest_trial() {
        let t = |trial, score| GridTrial { trial, grid_index: trial, overrides: vec![], score, error: None };
        let trials = vec![t(0, None), t(1, Some(0.5)), t(2, Some(0.5)), t(3, Some(0.1))];
        assert_eq!(select_best(&trials, GridTarget::Policy), Some(1));
        assert_eq!(select_best(&trials, GridTarget::Outcome), Some(3));
    }

    #[test]
    fn single_point_grid_search() {
        let spec = GridSpec::parse("policy.hidden = 4\n").unwrap();
        let res = grid_search(&tiny(), &spec, 3, GridTarget::Policy, 0);
        assert_eq!(res.trials.len(), 1);
        assert_eq!(res.best, Some(0));
        assert_eq!(res.warnings.len(), 1);
    }
}
