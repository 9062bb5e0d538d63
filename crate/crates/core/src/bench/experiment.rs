//! Experiment configuration, per-trial runs and report aggregation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{load_csv, train_test_split, DatasetSchema, Standardizer, Table};
use super::experts::{make_regional_experts, make_synthetic_experts, ScorerClassifier, ScorerRegressor, SyntheticExpertSpec};
use super::synthetic::{GaussianClusters, RegionalRegression};
use crate::attacks::AttackSpec;
use crate::costs::{Agent, AgentPool, Sample, TaskKind};
use crate::error::{Error, Result};
use crate::scorer::{Scorer, ScorerSpec};
use crate::trainer::{
    evaluate, fit_supervised, split_indices, train_baseline, train_sard, AttackMode, CostLedger, DeferralData, Metrics,
    SupervisedConfig, SupervisedLoss, TrainConfig, TrainOutcome,
};

/// Environment variable naming the housing CSV when the config leaves it out.
pub const HOUSING_ENV: &str = "L2D_HOUSING_CSV";
/// Fallback housing location, relative to the working directory.
pub const HOUSING_DEFAULT: &str = "data/california_housing.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationTask {
    #[serde(default)]
    pub clusters: GaussianClusters,
    pub n_train: usize,
    pub n_test: usize,
    pub experts: Vec<SyntheticExpertSpec>,
    /// Consultation costs of the experts (agent 0 always pays nothing).
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    /// The model only sees the leading `clusters.robust_dims` features.
    #[serde(default = "yes")]
    pub model_on_robust_block: bool,
    pub model_fit: SupervisedConfig,
}

fn yes() -> bool {
    true
}

/// Model plus one regressor per latitude band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionalAgents {
    pub model_hidden: Vec<usize>,
    pub expert_hidden: Vec<usize>,
    pub model_fit: SupervisedConfig,
    pub expert_fit: SupervisedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HousingTask {
    /// CSV location; falls back to `$L2D_HOUSING_CSV`, then `data/california_housing.csv`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "fifth")]
    pub test_fraction: f64,
    /// Latitude band edges in degrees.
    #[serde(default = "housing_bands")]
    pub thresholds: Vec<f64>,
    pub agents: RegionalAgents,
}

fn fifth() -> f64 {
    0.2
}

fn housing_bands() -> Vec<f64> {
    vec![36.0, 38.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionTask {
    #[serde(default)]
    pub data: RegionalRegression,
    pub n_train: usize,
    pub n_test: usize,
    pub agents: RegionalAgents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskConfig {
    SyntheticClassification(ClassificationTask),
    Housing(HousingTask),
    SyntheticRegression(RegressionTask),
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::SyntheticClassification(_) => "synthetic_classification",
            TaskConfig::Housing(_) => "housing",
            TaskConfig::SyntheticRegression(_) => "synthetic_regression",
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            TaskConfig::SyntheticClassification(_) => TaskKind::Classification,
            _ => TaskKind::Regression,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Sard,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Sard => "sard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub attack: AttackSpec,
    /// Comp-sum exponent used by the attack objectives.
    #[serde(default = "unit")]
    pub u: f64,
    /// Modes such as `clean`, `untargeted`, `targeted_2`; all of them when absent.
    #[serde(default)]
    pub modes: Option<Vec<String>>,
}

fn unit() -> f64 {
    1.0
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    #[serde(default = "four")]
    pub trials: usize,
    /// Trial `t` runs with seed `seed + t`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "fifth")]
    pub validation_fraction: f64,
    pub rejector_hidden: Vec<usize>,
    #[serde(default)]
    pub baseline: Option<TrainConfig>,
    #[serde(default)]
    pub sard: Option<TrainConfig>,
    pub evaluation: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.in_stage(format!("config {}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!("validation_fraction must lie in (0, 1), got {}", self.validation_fraction)));
        }
        if self.baseline.is_none() && self.sard.is_none() {
            return Err(Error::Config("configure at least one of [baseline] and [sard]".into()));
        }
        for c in self.baseline.iter().chain(&self.sard) {
            c.validate()?;
        }
        self.evaluation.attack.validate()?;
        if let Some(m) = &self.evaluation.modes {
            for s in m {
                AttackMode::parse(s)?;
            }
        }
        match &self.task {
            TaskConfig::SyntheticClassification(t) => {
                t.clusters.validate()?;
                if t.n_train < 2 || t.n_test == 0 {
                    return Err(Error::Config("need n_train >= 2 and n_test >= 1".into()));
                }
            }
            TaskConfig::Housing(t) => {
                if !(t.test_fraction > 0.0 && t.test_fraction < 1.0) {
                    return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
                }
            }
            TaskConfig::SyntheticRegression(t) => {
                t.data.validate()?;
                if t.n_train < 2 || t.n_test == 0 {
                    return Err(Error::Config("need n_train >= 2 and n_test >= 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<(Method, &TrainConfig)> {
        let mut m = Vec::new();
        if let Some(c) = &self.baseline {
            m.push((Method::Baseline, c));
        }
        if let Some(c) = &self.sard {
            m.push((Method::Sard, c));
        }
        m
    }

    /// Hex SHA-256 of the canonical JSON form with the seed zeroed, so runs
    /// of one config under different seeds share a digest.
    pub fn digest(&self) -> String {
        let unseeded = Self { seed: 0, ..self.clone() };
        let json = serde_json::to_string(&unseeded).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|t| self.seed.wrapping_add(t)).collect()
    }
}

/// Everything one trial trains and evaluates on.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: DeferralData,
    pub validation: DeferralData,
    pub test: DeferralData,
    /// Test accuracy (classification) or RMSE (regression) of every agent.
    pub agent_metrics: Vec<f64>,
}

impl TaskData {
    pub fn input_dim(&self) -> usize {
        self.test.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn num_agents(&self) -> usize {
        self.test.num_agents()
    }
}

/// Resolves the housing CSV location from the config, the environment and
/// the default path, relative to `base`.
pub fn housing_path(task: &HousingTask, base: &Path) -> PathBuf {
    let p = task
        .path
        .clone()
        .or_else(|| std::env::var_os(HOUSING_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(HOUSING_DEFAULT));
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

/// Builds agents and cached costs for one seed. `base` resolves relative
/// dataset paths; `table` reuses an already loaded housing table.
pub fn build_task(cfg: &ExperimentConfig, seed: u64, base: &Path, table: Option<&Table>) -> Result<TaskData> {
    let kind = cfg.task.kind();
    let (train, train_ix, test, test_ix, pool) = match &cfg.task {
        TaskConfig::SyntheticClassification(t) => {
            let all = t.clusters.generate(t.n_train + t.n_test, seed).map_err(|e| e.in_stage("data"))?;
            let (train, test) = all.split_at(t.n_train);
            let pool = classification_pool(t, train, seed).map_err(|e| e.in_stage("agents"))?;
            let n = all.len();
            (train.to_vec(), (0..t.n_train).collect::<Vec<_>>(), test.to_vec(), (t.n_train..n).collect(), pool)
        }
        TaskConfig::SyntheticRegression(t) => {
            let all = t.data.generate(t.n_train + t.n_test, seed).map_err(|e| e.in_stage("data"))?;
            let (train_ix, test_ix): (Vec<usize>, Vec<usize>) = ((0..t.n_train).collect(), (t.n_train..all.len()).collect());
            let rows: Vec<Vec<f64>> = all.iter().map(|s| s.x.clone()).collect();
            let names: Vec<String> = (0..t.data.dim).map(|i| format!("x{i}")).collect();
            let (train, test, std) = standardized(&rows, &all.iter().map(|s| s.t.unwrap_or(0.0)).collect::<Vec<_>>(), &train_ix, &test_ix, &names)?;
            let lat = t.data.latitude;
            let bands: Vec<f64> = t.data.thresholds.iter().map(|v| std.apply_one(lat, *v)).collect();
            let pool = regional_pool(&t.agents, &train, lat, &bands, seed).map_err(|e| e.in_stage("agents"))?;
            (train, train_ix, test, test_ix, pool)
        }
        TaskConfig::Housing(t) => {
            let loaded;
            let table = match table {
                Some(tb) => tb,
                None => {
                    loaded = load_housing(t, base)?;
                    &loaded
                }
            };
            let (train_ix, test_ix) = train_test_split(table.len(), t.test_fraction, seed);
            let (train, test, std) = standardized(&table.x, &table.label, &train_ix, &test_ix, &table.schema.features)?;
            let lat = table
                .schema
                .feature_index("Latitude")
                .ok_or_else(|| Error::Schema("housing schema has no Latitude column".into()))?;
            let bands: Vec<f64> = t.thresholds.iter().map(|v| std.apply_one(lat, *v)).collect();
            let pool = regional_pool(&t.agents, &train, lat, &bands, seed).map_err(|e| e.in_stage("agents"))?;
            (train, train_ix, test, test_ix, pool)
        }
    };
    let all_train = DeferralData::build(&train, &pool, kind, Some(&train_ix)).map_err(|e| e.in_stage("costs"))?;
    let test = DeferralData::build(&test, &pool, kind, Some(&test_ix)).map_err(|e| e.in_stage("costs"))?;
    let (fit, val) = split_indices(all_train.len(), cfg.validation_fraction, seed);
    let agent_metrics = agent_metrics(&test);
    Ok(TaskData {
        train: all_train.subset(&fit),
        validation: all_train.subset(&val),
        test,
        agent_metrics,
    })
}

pub fn load_housing(task: &HousingTask, base: &Path) -> Result<Table> {
    let path = housing_path(task, base);
    load_csv(&path, &DatasetSchema::california_housing()).map_err(|e| e.in_stage("housing data"))
}

/// Standardizes features on the training rows; targets stay in raw units.
fn standardized(
    rows: &[Vec<f64>],
    target: &[f64],
    train_ix: &[usize],
    test_ix: &[usize],
    names: &[String],
) -> Result<(Vec<Sample>, Vec<Sample>, Standardizer)> {
    let train_rows: Vec<Vec<f64>> = train_ix.iter().map(|&i| rows[i].clone()).collect();
    let std = Standardizer::fit(&train_rows, names).map_err(|e| e.in_stage("standardize"))?;
    let take = |ix: &[usize]| -> Vec<Sample> { ix.iter().map(|&i| Sample::regression(std.apply(&rows[i]), target[i])).collect() };
    let (a, b) = (take(train_ix), take(test_ix));
    Ok((a, b, std))
}

fn classification_pool(t: &ClassificationTask, train: &[Sample], seed: u64) -> Result<AgentPool> {
    let classes = t.clusters.classes;
    let (features, input) = if t.model_on_robust_block {
        (Some((0..t.clusters.robust_dims).collect::<Vec<_>>()), t.clusters.robust_dims)
    } else {
        (None, t.clusters.dim)
    };
    let rows: Vec<Sample> = match &features {
        Some(f) => train
            .iter()
            .map(|s| Sample::classification(f.iter().map(|&i| s.x[i]).collect(), s.y.unwrap_or(0)))
            .collect(),
        None => train.to_vec(),
    };
    let fit = SupervisedConfig {
        seed: t.model_fit.seed.wrapping_add(seed),
        ..t.model_fit.clone()
    };
    let model = fit_supervised(&rows, &ScorerSpec::linear(input, classes), SupervisedLoss::CrossEntropy, &fit)?;
    let specs: Vec<SyntheticExpertSpec> = t
        .experts
        .iter()
        .map(|s| SyntheticExpertSpec {
            seed: s.seed ^ seed.rotate_left(32),
            ..s.clone()
        })
        .collect();
    let mut agents: Vec<Box<dyn Agent>> = vec![Box::new(ScorerClassifier { scorer: model, features })];
    agents.extend(make_synthetic_experts(&specs, classes)?);
    let mut beta = vec![0.0];
    match &t.beta {
        Some(b) if b.len() == t.experts.len() => beta.extend(b),
        Some(b) => {
            return Err(Error::LengthMismatch {
                left: b.len(),
                right: t.experts.len(),
                context: "beta vs experts",
            })
        }
        None => beta.extend(std::iter::repeat_n(0.0, t.experts.len())),
    }
    AgentPool::new(agents, beta)
}

fn regional_pool(a: &RegionalAgents, train: &[Sample], lat: usize, bands: &[f64], seed: u64) -> Result<AgentPool> {
    let dim = train.first().map_or(0, |s| s.x.len());
    let model_fit = SupervisedConfig {
        seed: a.model_fit.seed.wrapping_add(seed),
        ..a.model_fit.clone()
    };
    let model = fit_supervised(train, &ScorerSpec::mlp(dim, &a.model_hidden, 1), SupervisedLoss::Squared, &model_fit)?;
    let latitudes: Vec<f64> = train.iter().map(|s| s.x[lat]).collect();
    let expert_fit = SupervisedConfig {
        seed: a.expert_fit.seed.wrapping_add(seed),
        ..a.expert_fit.clone()
    };
    let experts = make_regional_experts(train, &latitudes, bands, &ScorerSpec::mlp(dim, &a.expert_hidden, 1), &expert_fit)?;
    let mut agents: Vec<Box<dyn Agent>> = vec![Box::new(ScorerRegressor { scorer: model })];
    agents.extend(experts.into_iter().map(|scorer| Box::new(ScorerRegressor { scorer }) as Box<dyn Agent>));
    let n = agents.len();
    AgentPool::new(agents, vec![0.0; n])
}

fn agent_metrics(d: &DeferralData) -> Vec<f64> {
    let n = d.len().max(1) as f64;
    (0..d.num_agents())
        .map(|j| {
            let s: f64 = (0..d.len())
                .map(|k| {
                    let p = &d.predictions[k][j];
                    let z = &d.samples[k];
                    match d.kind {
                        TaskKind::Classification => f64::from(u8::from(p.class_pred.is_some() && p.class_pred == z.y)),
                        TaskKind::Regression => (p.reg_pred.unwrap_or(f64::NAN) - z.t.unwrap_or(f64::NAN)).powi(2),
                    }
                })
                .sum();
            match d.kind {
                TaskKind::Classification => s / n,
                TaskKind::Regression => (s / n).sqrt(),
            }
        })
        .collect()
}

/// Evaluation modes: explicit list, or clean, untargeted and every target.
pub fn eval_modes(cfg: &EvalConfig, agents: usize) -> Result<Vec<AttackMode>> {
    match &cfg.modes {
        Some(m) => m.iter().map(|s| AttackMode::parse(s)).collect(),
        None => {
            let mut m = vec![AttackMode::Clean, AttackMode::Untargeted];
            m.extend((0..agents).map(AttackMode::Targeted));
            Ok(m)
        }
    }
}

pub fn train_method(method: Method, data: &TaskData, hidden: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let spec = ScorerSpec::mlp(data.input_dim(), hidden, data.num_agents());
    let run = match method {
        Method::Baseline => train_baseline,
        Method::Sard => train_sard,
    };
    run(&data.train, &data.validation, &spec, cfg).map_err(|e| e.in_stage(format!("train {}", method.label())))
}

pub fn evaluate_modes(r: &Scorer, data: &TaskData, eval: &EvalConfig, seed: u64) -> Result<Vec<Metrics>> {
    eval_modes(eval, data.num_agents())?
        .into_iter()
        .map(|m| evaluate(r, &data.test, m, &eval.attack, eval.u, seed).map_err(|e| e.in_stage(format!("evaluate {}", m.label()))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTrial {
    pub method: Method,
    pub best_epoch: usize,
    pub best_val_risk: f64,
    pub ledger: CostLedger,
    pub metrics: Vec<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub agent_metrics: Vec<f64>,
    pub methods: Vec<MethodTrial>,
}

pub fn run_trial(cfg: &ExperimentConfig, seed: u64, base: &Path, table: Option<&Table>) -> Result<TrialResult> {
    let data = build_task(cfg, seed, base, table).map_err(|e| e.in_stage(format!("seed {seed}")))?;
    let methods = cfg
        .methods()
        .into_iter()
        .map(|(m, tc)| {
            let tc = TrainConfig {
                seed: tc.seed.wrapping_add(seed),
                ..tc.clone()
            };
            let out = train_method(m, &data, &cfg.rejector_hidden, &tc)?;
            let metrics = evaluate_modes(&out.scorer, &data, &cfg.evaluation, seed)?;
            Ok(MethodTrial {
                method: m,
                best_epoch: out.best_epoch,
                best_val_risk: out.best_val_risk,
                ledger: out.ledger,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage(format!("seed {seed}")))?;
    Ok(TrialResult {
        seed,
        agent_metrics: data.agent_metrics,
        methods,
    })
}

/// Runs every trial (in parallel) and aggregates them in seed order.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> Result<Report> {
    cfg.validate()?;
    let table = match &cfg.task {
        TaskConfig::Housing(t) => Some(load_housing(t, base)?),
        _ => None,
    };
    let trials = cfg
        .trial_seeds()
        .into_par_iter()
        .map(|s| run_trial(cfg, s, base, table.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    aggregate(cfg.task.name(), &cfg.digest(), trials)
}

/// Mean and sample standard deviation (zero for a single trial).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    pub metric_name: String,
    pub metric: Summary,
    pub mean_cost: Summary,
    /// Share of queries routed to each agent.
    pub deferral: Vec<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub forward: u64,
    pub backward: u64,
    pub validation_forward: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub modes: Vec<ModeSummary>,
    pub ledger: LedgerTotals,
}

impl MethodSummary {
    pub fn mode(&self, label: &str) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub agent_metrics: Vec<Summary>,
    pub methods: Vec<MethodSummary>,
    pub trials: Vec<TrialResult>,
}

impl Report {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per (method, mode): metric and per-agent deferral shares.
    pub fn to_csv(&self) -> Result<String> {
        let agents = self.agent_metrics.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string(), "mode".into(), "metric".into(), "mean".into(), "std".into(), "mean_cost".into()];
        header.extend((0..agents).map(|j| format!("share_{j}")));
        w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
        for m in &self.methods {
            for s in &m.modes {
                let mut row = vec![
                    m.method.label().to_string(),
                    s.mode.clone(),
                    s.metric_name.clone(),
                    format!("{:.6}", s.metric.mean),
                    format!("{:.6}", s.metric.std),
                    format!("{:.6}", s.mean_cost.mean),
                ];
                row.extend(s.deferral.iter().map(|d| format!("{:.6}", d.mean)));
                w.write_record(&row).map_err(|e| Error::Serde(e.to_string()))?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.to_csv()?).map_err(|e| Error::io(&csv, e))
    }
}

/// Aggregates per-seed results; trials are sorted by seed first.
pub fn aggregate(task: &str, digest: &str, mut trials: Vec<TrialResult>) -> Result<Report> {
    if trials.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    trials.sort_by_key(|t| t.seed);
    let first = &trials[0];
    let agents = first.agent_metrics.len();
    for t in &trials {
        check_same(agents, t.agent_metrics.len(), "agents across trials")?;
        check_same(first.methods.len(), t.methods.len(), "methods across trials")?;
    }
    let agent_metrics = (0..agents)
        .map(|j| Summary::of(&trials.iter().map(|t| t.agent_metrics[j]).collect::<Vec<_>>()))
        .collect();
    let mut methods = Vec::new();
    for (mi, mt) in first.methods.iter().enumerate() {
        let runs: Vec<&MethodTrial> = trials.iter().map(|t| &t.methods[mi]).collect();
        if runs.iter().any(|r| r.method != mt.method || r.metrics.len() != mt.metrics.len()) {
            return Err(Error::Config("trials disagree on methods or modes".into()));
        }
        let modes = mt
            .metrics
            .iter()
            .enumerate()
            .map(|(k, m0)| {
                let col = |f: &dyn Fn(&Metrics) -> f64| Summary::of(&runs.iter().map(|r| f(&r.metrics[k])).collect::<Vec<_>>());
                ModeSummary {
                    mode: m0.mode.clone(),
                    metric_name: m0.metric_name.clone(),
                    metric: col(&|m| m.metric),
                    mean_cost: col(&|m| m.mean_cost),
                    deferral: (0..m0.deferral.len()).map(|j| col(&|m| m.deferral[j])).collect(),
                }
            })
            .collect();
        let ledger = LedgerTotals {
            forward: runs.iter().map(|r| r.ledger.forward_count()).sum(),
            backward: runs.iter().map(|r| r.ledger.backward_count()).sum(),
            validation_forward: runs.iter().map(|r| r.ledger.validation_forward).sum(),
        };
        methods.push(MethodSummary {
            method: mt.method,
            modes,
            ledger,
        });
    }
    Ok(Report {
        task: task.into(),
        config_digest: digest.into(),
        seeds: trials.iter().map(|t| t.seed).collect(),
        agent_metrics,
        methods,
        trials,
    })
}

fn check_same(a: usize, b: usize, context: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b, context });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
trials = 2
seed = 7
rejector_hidden = [8]

[task]
kind = "synthetic_classification"
n_train = 120
n_test = 60
experts = [{ assigned = [0, 1, 2], p = 0.9 }, { assigned = [3], p = 0.9 }]
clusters = { classes = 5, dim = 6, robust_dims = 2, robust_scale = 3.0, nuisance_scale = 0.4 }
model_fit = { epochs = 20, batch_size = 120, learning_rate = 0.05 }

[baseline]
epochs = 3
batch_size = 32
learning_rate = 0.01
attack = { p = "inf", gamma = 0.0, steps = 1, step_size = 0.1 }

[sard]
epochs = 2
batch_size = 32
learning_rate = 0.01
psi = { u = 1.0, rho = 1.0, nu = 0.2 }
attack = { p = "inf", gamma = 0.3, steps = 2, step_size = 0.3, init = "random_in_ball" }

[evaluation]
attack = { p = "inf", gamma = 0.3, steps = 3, step_size = 0.2 }
"#;

    #[test]
    fn summary_statistics() {
        assert_eq!(Summary::of(&[0.5]), Summary { mean: 0.5, std: 0.0 });
        let s = Summary::of(&[1.0, 2.0, 3.0]);
        assert!((s.mean - 2.0).abs() < 1e-15 && (s.std - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = SMALL.replace("trials = 2", "trials = 2\ncolour = 1");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let nested = SMALL.replace("n_test = 60", "n_test = 60\nwat = 3");
        assert!(ExperimentConfig::from_toml(&nested).is_err());
    }

    #[test]
    fn small_run_is_deterministic_and_complete() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let a = run_experiment(&cfg, Path::new(".")).unwrap();
        let b = run_experiment(&cfg, Path::new(".")).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        assert_eq!(a.seeds, vec![7, 8]);
        assert_eq!(a.agent_metrics.len(), 3);
        let sard = a.method(Method::Sard).unwrap();
        // clean, untargeted, targeted_0..2
        assert_eq!(sard.modes.len(), 5);
        for m in &sard.modes {
            let share: f64 = m.deferral.iter().map(|d| d.mean).sum();
            assert!((share - 1.0).abs() < 1e-9);
        }
        assert!(sard.ledger.forward > a.method(Method::Baseline).unwrap().ledger.forward);
        assert_eq!(a.config_digest.len(), 64);
    }

    #[test]
    fn digest_ignores_seed_only() {
        let a = ExperimentConfig::from_toml(SMALL).unwrap();
        let b = ExperimentConfig { seed: a.seed + 9, ..a.clone() };
        let c = ExperimentConfig { validation_fraction: 0.3, ..a.clone() };
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn single_seed_has_zero_std() {
        let cfg = ExperimentConfig::from_toml(&SMALL.replace("trials = 2", "trials = 1")).unwrap();
        let r = run_experiment(&cfg, Path::new(".")).unwrap();
        for m in &r.methods {
            for s in &m.modes {
                assert_eq!(s.metric.std, 0.0);
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let d = build_task(&cfg, 3, Path::new("."), None).unwrap();
        assert_eq!(d.train.len() + d.validation.len(), 120);
        assert_eq!(d.test.len(), 60);
        let mut all: Vec<Vec<u64>> = d
            .train
            .samples
            .iter()
            .chain(&d.validation.samples)
            .chain(&d.test.samples)
            .map(|s| s.x.iter().map(|v| v.to_bits()).collect())
            .collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn missing_housing_file_names_path() {
        let t = HousingTask {
            path: Some(PathBuf::from("/nonexistent/housing.csv")),
            test_fraction: 0.2,
            thresholds: housing_bands(),
            agents: RegionalAgents {
                model_hidden: vec![4],
                expert_hidden: vec![4],
                model_fit: SupervisedConfig { epochs: 1, batch_size: 8, learning_rate: 0.01, weight_decay: 0.0, seed: 0 },
                expert_fit: SupervisedConfig { epochs: 1, batch_size: 8, learning_rate: 0.01, weight_decay: 0.0, seed: 0 },
            },
        };
        let e = load_housing(&t, Path::new(".")).unwrap_err().to_string();
        assert!(e.contains("/nonexistent/housing.csv"), "{e}");
    }

    #[test]
    fn regression_task_runs() {
        let cfg = r#"
trials = 1
rejector_hidden = [8]
[task]
kind = "synthetic_regression"
n_train = 300
n_test = 100
[task.agents]
model_hidden = [8]
expert_hidden = [8]
model_fit = { epochs = 5, batch_size = 64, learning_rate = 0.01 }
expert_fit = { epochs = 5, batch_size = 64, learning_rate = 0.01 }
[baseline]
epochs = 2
batch_size = 64
learning_rate = 0.01
attack = { p = "inf", gamma = 0.0, steps = 1, step_size = 0.1 }
[evaluation]
attack = { p = "inf", gamma = 0.25, steps = 2, step_size = 0.125 }
modes = ["clean", "targeted_1"]
"#;
        let cfg = ExperimentConfig::from_toml(cfg).unwrap();
        let r = run_experiment(&cfg, Path::new(".")).unwrap();
        let b = r.method(Method::Baseline).unwrap();
        assert_eq!(b.modes.len(), 2);
        assert_eq!(b.modes[0].metric_name, "rmse");
        assert_eq!(r.agent_metrics.len(), 4);
    }
}
