//! Command implementations behind the `fairpol` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use fairpol::data::{simulate, SimConfig};
use fairpol::experiment::{
    assemble_grid_result, evaluate_trial, parse_seeds, prepare, run_seed, sample_grid, ExperimentConfig, GridSearchResult,
    GridSpec, GridTarget, ResultsTable, SeedFailure, SeedRun,
};
use fairpol::metrics::action_fairness_gap_sim;
use fairpol::nuisance::oracle_nuisance;
use fairpol::scores::{conditional_values, score};
use fairpol::theory::{
    bound_report, brute_force_toy_search, check_lemma1, check_lemma2, BoundInputs, BoundReport, LemmaVerdict,
    ToyObjective, ToyProblem, ToySearchResult,
};
use fairpol::{PolicyFn, ScoreMethod, TrainedPolicy, ValueReport};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FAIRPOL_OUT";
const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "fairpol", version, about = "Fair off-policy learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a simulated credit-lending dataset as CSV.
    Simulate(SimulateArgs),
    /// Run the full pipeline for every seed of a configuration.
    Train(TrainArgs),
    /// Score a saved policy on the test split of a configuration.
    Evaluate(EvaluateArgs),
    /// Seeded random search over a hyperparameter grid.
    Gridsearch(GridArgs),
    /// Generalization-bound penalties.
    Bounds(BoundsArgs),
    /// Brute-force optima and lemma checks on a toy problem.
    Toycheck(ToyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Starting profile (`sim` or `csv`).
    #[arg(long, default_value = "sim")]
    pub profile: String,
    /// Key/value config file applied on top of the profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seeds as `0,1,2` or `0..5`.
    #[arg(long)]
    pub seeds: Option<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::profile(&self.profile)?;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        for o in &self.overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("override {o:?} is not KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 3000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub p_s: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise_sd: f64,
    /// Output CSV (default `<out root>/simulated.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the ground-truth nuisances to this CSV.
    #[arg(long)]
    pub nuisances: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output root; results go to `<out>/<id>-<hash>/`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parallel seed jobs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Record wall time per seed (makes results.csv non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Saved `policy.json`.
    #[arg(long)]
    pub policy: PathBuf,
    /// Seed whose split to evaluate on.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// `sim`, `real` or a grid file of `key = v1, v2` lines.
    #[arg(long, default_value = "sim")]
    pub grid: String,
    #[arg(long, default_value_t = 30)]
    pub budget: usize,
    /// `policy`, `representation`, `outcome` or `propensity`.
    #[arg(long, default_value = "policy")]
    pub target: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Key/value file with any of the fields below.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    /// Rademacher complexity (default `1/sqrt(n)`).
    #[arg(long)]
    pub rademacher: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub p1: Option<f64>,
    #[arg(long)]
    pub p2: Option<f64>,
    /// `dm`, `ipw`, `dr` or `all`.
    #[arg(long, default_value = "all")]
    pub method: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Built-in table `4` or `5`.
    #[arg(long, default_value = "4", conflicts_with = "toy")]
    pub table: String,
    /// Toy CSV with header `s,x,prob,mu1,mu0`.
    #[arg(long)]
    pub toy: Option<PathBuf>,
    /// Grid step, e.g. `1/30` or `0.05`.
    #[arg(long, default_value = "1/30")]
    pub grid_step: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn out_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// First 12 hex digits of the SHA-256 of the canonical config text.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.to_text().as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

pub fn simulate_cmd(args: &SimulateArgs) -> Result<PathBuf> {
    let cfg = SimConfig { n: args.n, p_s: args.p_s, noise_sd: args.noise_sd, seed: args.seed };
    let (ds, oracle) = simulate(&cfg)?;
    let path = args.out.clone().unwrap_or_else(|| out_root(None).join("simulated.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ds.save_csv(&path)?;
    if let Some(np) = &args.nuisances {
        oracle_nuisance(&ds, &oracle).write_csv(&ds.row_ids, fs::File::create(np)?)?;
    }
    Ok(path)
}

/// Outcome of `train`: where files went and whether every seed finished.
#[derive(Debug)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub table: ResultsTable,
}

impl TrainOutcome {
    pub fn all_completed(&self) -> bool {
        self.table.failures.is_empty()
    }
}

fn write_seed(dir: &Path, run: &SeedRun) -> Result<()> {
    let d = dir.join(format!("seed_{}", run.row.seed));
    fs::create_dir_all(&d)?;
    fs::write(d.join("policy.json"), run.policy.to_json()?)?;
    run.policy_report.write_csv(fs::File::create(d.join("policy_trace.csv"))?)?;
    if let Some((model, report)) = &run.representation {
        fs::write(d.join("representation.json"), model.phi.to_json()?)?;
        report.write_csv(fs::File::create(d.join("representation_trace.csv"))?)?;
    }
    #[derive(Serialize)]
    struct SeedInfo<'a> {
        test: &'a ValueReport,
        oracle_optimal: &'a Option<ValueReport>,
        oracle_action_fair: &'a Option<ValueReport>,
        group_sensitivity: Option<f64>,
        nuisance_val_mse_logloss: Option<(f64, f64)>,
        warnings: &'a [String],
    }
    write_json(
        &d.join("seed.json"),
        &SeedInfo {
            test: &run.test_report,
            oracle_optimal: &run.oracle_optimal,
            oracle_action_fair: &run.oracle_action_fair,
            group_sensitivity: run.group_sensitivity,
            nuisance_val_mse_logloss: run.nuisance_val,
            warnings: &run.warnings,
        },
    )
}

pub fn train_cmd(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut cfg = args.config.load()?;
    cfg.timing |= args.timing;
    let dir = out_root(args.out.as_deref()).join(format!("{}-{}", cfg.id, config_hash(&cfg)));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;

    let results: Vec<(u64, fairpol::Result<SeedRun>)> =
        pool(args.jobs)?.install(|| cfg.seeds.par_iter().map(|&s| (s, run_seed(&cfg, s))).collect());

    let mut table = ResultsTable::default();
    for (seed, r) in results {
        match r {
            Ok(run) => {
                write_seed(&dir, &run)?;
                for w in &run.warnings {
                    eprintln!("seed {seed}: {w}");
                }
                table.rows.push(run.row);
            }
            Err(e) => {
                eprintln!("seed {seed} failed: {e}");
                table.failures.push(SeedFailure { seed, error: e.to_string() });
            }
        }
    }
    table.write_csv(fs::File::create(dir.join("results.csv"))?)?;
    write_json(&dir.join("summary.json"), &table.summary(&cfg.id))?;
    Ok(TrainOutcome { dir, table })
}

#[derive(Debug, Serialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub test_rows: usize,
    pub values: Vec<(ScoreMethod, ValueReport)>,
    pub action_fairness_gap: Option<f64>,
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<EvaluationReport> {
    let cfg = args.config.load()?;
    let text = fs::read_to_string(&args.policy).with_context(|| format!("reading {}", args.policy.display()))?;
    let policy = TrainedPolicy::from_json(&text)?;
    let prep = prepare(&cfg, args.seed)?;
    let (raw, nuis) = (&prep.raw[2], &prep.nuis[2]);
    let pi = (0..raw.len())
        .map(|i| policy.try_prob(raw.x.row(i), raw.s[i]))
        .collect::<fairpol::Result<Vec<f64>>>()?;
    let values = ScoreMethod::ALL
        .iter()
        .map(|&m| Ok((m, conditional_values(&score(m, &pi, raw, nuis)?, &raw.s, raw.group_count)?)))
        .collect::<fairpol::Result<Vec<_>>>()?;
    let gap = match &prep.oracle {
        Some((sim, _)) => Some(action_fairness_gap_sim(&policy as &dyn PolicyFn, sim, cfg.n_mc, args.seed)?),
        None => None,
    };
    let report = EvaluationReport { seed: args.seed, test_rows: raw.len(), values, action_fairness_gap: gap };
    emit(args.out.as_deref(), &report)?;
    Ok(report)
}

pub fn grid_cmd(args: &GridArgs) -> Result<GridSearchResult> {
    let cfg = args.config.load()?;
    let spec = match GridSpec::preset(&args.grid) {
        Ok(s) => s,
        Err(_) => GridSpec::parse(
            &fs::read_to_string(&args.grid).with_context(|| format!("grid {:?} is neither a preset nor a file", args.grid))?,
        )?,
    };
    let target: GridTarget = args.target.parse()?;
    let (indices, warning) = sample_grid(&spec, args.budget, args.seed);
    if let Some(w) = &warning {
        eprintln!("warning: {w}");
    }
    let scores = pool(args.jobs)?.install(|| {
        indices
            .par_iter()
            .map(|&i| evaluate_trial(&cfg, &spec.point(i), target, args.seed))
            .collect::<Vec<_>>()
    });
    let result = assemble_grid_result(&spec, &indices, scores, target, warning);

    let dir = out_root(args.out.as_deref()).join(format!("grid-{}-{}", cfg.id, config_hash(&cfg)));
    fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("grid_log.csv"))?;
    w.write_record(["trial", "grid_index", "overrides", "score", "error"])?;
    for t in &result.trials {
        let ov: Vec<String> = t.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
        w.write_record([
            t.trial.to_string(),
            t.grid_index.to_string(),
            ov.join(";"),
            t.score.map(|s| s.to_string()).unwrap_or_default(),
            t.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    write_json(&dir.join("grid.json"), &result)?;
    Ok(result)
}

fn bound_inputs(args: &BoundsArgs) -> Result<BoundInputs> {
    let mut kv: Vec<(String, String)> = Vec::new();
    if let Some(p) = &args.inputs {
        for line in fs::read_to_string(p)?.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').with_context(|| format!("bad line {line:?}"))?;
            kv.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let flags = [
        ("n", args.n.map(|v| v.to_string())),
        ("nu", args.nu.map(|v| v.to_string())),
        ("groups", args.groups.map(|v| v.to_string())),
        ("c", args.c.map(|v| v.to_string())),
        ("xi", args.xi.map(|v| v.to_string())),
        ("rademacher", args.rademacher.map(|v| v.to_string())),
        ("p", args.p.map(|v| v.to_string())),
        ("p1", args.p1.map(|v| v.to_string())),
        ("p2", args.p2.map(|v| v.to_string())),
    ];
    kv.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));

    let n: f64 = kv.iter().rev().find(|(k, _)| k == "n").map(|(_, v)| v.parse()).transpose()?.unwrap_or(1e4);
    let mut inp = BoundInputs::with_n(n);
    for (k, v) in &kv {
        match k.as_str() {
            "n" => {}
            "nu" => inp.nu = v.parse()?,
            "groups" | "group_count" => inp.group_count = v.parse()?,
            "c" => inp.c = v.parse()?,
            "xi" => inp.xi = v.parse()?,
            "rademacher" => inp.rademacher = v.parse()?,
            "p" => inp.p = v.parse()?,
            "p1" => inp.p1 = v.parse()?,
            "p2" => inp.p2 = v.parse()?,
            "method" => {}
            _ => bail!("unknown bound input {k:?}"),
        }
    }
    Ok(inp)
}

pub fn bounds_cmd(args: &BoundsArgs) -> Result<Vec<BoundReport>> {
    let base = bound_inputs(args)?;
    let methods = if args.method.eq_ignore_ascii_case("all") {
        ScoreMethod::ALL.to_vec()
    } else {
        args.method.split(',').map(|m| m.trim().parse()).collect::<fairpol::Result<Vec<ScoreMethod>>>()?
    };
    let reports = methods
        .into_iter()
        .map(|method| bound_report(&BoundInputs { method, ..base }))
        .collect::<fairpol::Result<Vec<_>>>()?;
    emit(args.out.as_deref(), &reports)?;
    Ok(reports)
}

#[derive(Debug, Serialize)]
pub struct ToyReport {
    pub grid_step: f64,
    pub unrestricted: ToySearchResult,
    pub max_min: ToySearchResult,
    pub action_fair: ToySearchResult,
    pub action_fair_max_min: ToySearchResult,
    pub lemma1: bool,
    pub lemma2: LemmaVerdict,
}

pub fn parse_step(s: &str) -> Result<f64> {
    match s.split_once('/') {
        Some((a, b)) => Ok(a.trim().parse::<f64>()? / b.trim().parse::<f64>()?),
        None => Ok(s.trim().parse()?),
    }
}

pub fn toy_cmd(args: &ToyArgs) -> Result<ToyReport> {
    let toy = match (&args.toy, args.table.as_str()) {
        (Some(p), _) => ToyProblem::load_csv(p)?,
        (None, "4") => ToyProblem::table4(),
        (None, "5") => ToyProblem::table5(),
        (None, t) => bail!("unknown toy table {t:?} (expected 4 or 5)"),
    };
    let step = parse_step(&args.grid_step)?;
    let search = |o, af| brute_force_toy_search(&toy, o, step, af);
    let report = ToyReport {
        grid_step: step,
        unrestricted: search(ToyObjective::Unrestricted, false)?,
        max_min: search(ToyObjective::MaxMin, false)?,
        action_fair: search(ToyObjective::Unrestricted, true)?,
        action_fair_max_min: search(ToyObjective::MaxMin, true)?,
        lemma1: check_lemma1(&toy, step)?,
        lemma2: check_lemma2(&toy, step)?,
    };
    emit(args.out.as_deref(), &report)?;
    Ok(report)
}

/// Runs a parsed command; `Ok(false)` means some seed failed.
pub fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Simulate(a) => {
            let p = simulate_cmd(a)?;
            eprintln!("wrote {}", p.display());
        }
        Command::Train(a) => {
            let o = train_cmd(a)?;
            eprintln!(
                "{} of {} seeds completed; results in {}",
                o.table.rows.len(),
                o.table.rows.len() + o.table.failures.len(),
                o.dir.display()
            );
            return Ok(o.all_completed());
        }
        Command::Evaluate(a) => {
            evaluate_cmd(a)?;
        }
        Command::Gridsearch(a) => {
            let r = grid_cmd(a)?;
            match r.best_trial() {
                Some(t) => eprintln!("best trial {} score {:?}: {:?}", t.trial, t.score, t.overrides),
                None => eprintln!("no trial succeeded"),
            }
            return Ok(r.best.is_some());
        }
        Command::Bounds(a) => {
            bounds_cmd(a)?;
        }
        Command::Toycheck(a) => {
            toy_cmd(a)?;
        }
    }
    Ok(true)
}
