//! Command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::experiment::{
    aggregate, build_task, evaluate_modes, load_housing, train_method, ExperimentConfig, Method, MethodTrial, TaskConfig, TrialResult,
};
use crate::error::{Error, Result};
use crate::oracle::BoundConstant;
use crate::scorer::Scorer;
use crate::trainer::{evaluate, write_history, AttackMode, CostLedger};
use crate::verify::{run_suite, Suite, SuiteReport, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "robust-l2d", version, about = "Adversarially robust learning-to-defer experiments")]
pub struct Cli {
    /// Seed; overrides the `seed` key of a config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Identities,
    Gradients,
    Attacks,
    Bounds,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConstantArg {
    Stated,
    ProofDerived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Baseline,
    Sard,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Clean,
    Untargeted,
    Targeted,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run property suites; exit 2 on any violation.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        /// Constant of the consistency bound.
        #[arg(long, value_enum, default_value = "stated")]
        constant: ConstantArg,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 20)]
        tables: usize,
    },
    /// Build agents for one seed and train rejectors.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        method: MethodArg,
    },
    /// Evaluate one checkpoint under one attack mode.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Agent forced by a targeted attack.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Evaluate every checkpoint of a training run under all configured modes.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Training run directory (defaults to `--out`).
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Aggregate evaluated runs into mean and standard deviation tables.
    Report {
        /// Run directories, or one directory whose subdirectories are runs.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
    },
    /// Train, evaluate and report every trial of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Provenance written next to every artifact set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub task: Option<String>,
    pub version: String,
    pub files: Vec<String>,
}

impl Manifest {
    fn new(command: &str, cfg: Option<&ExperimentConfig>, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config_digest: cfg.map(ExperimentConfig::digest),
            seed,
            task: cfg.map(|c| c.task.name().to_string()),
            version: env!("CARGO_PKG_VERSION").into(),
            files: Vec::new(),
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join("manifest.json"), &serde_json::to_string_pretty(self)?)
    }

    fn read(dir: &Path) -> Result<Self> {
        let p = dir.join("manifest.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Training summary stored beside each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub method: Method,
    pub best_epoch: usize,
    pub best_val_risk: f64,
    pub ledger: CostLedger,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", chain(&e));
            EXIT_ERROR
        }
    }
}

fn chain(e: &Error) -> String {
    let mut s = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(inner) = src {
        let m = inner.to_string();
        if !s.contains(&m) {
            s.push_str(": ");
            s.push_str(&m);
        }
        src = inner.source();
    }
    s
}

pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Verify {
            suite,
            constant,
            instances,
            tables,
        } => cmd_verify(cli, *suite, *constant, *instances, *tables),
        Command::Train { config, method } => cmd_train(cli, config, *method),
        Command::Attack {
            config,
            checkpoint,
            mode,
            target,
        } => cmd_attack(cli, config, checkpoint, *mode, *target),
        Command::Evaluate { config, run } => cmd_evaluate(cli, config, run.as_deref().unwrap_or(&cli.out)),
        Command::Report { runs } => cmd_report(cli, runs),
        Command::Run { config } => cmd_run(cli, config),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Relative dataset paths resolve against the working directory first, then
/// against the config's directory.
fn base_for(cfg: &ExperimentConfig, config_path: &Path) -> PathBuf {
    if let TaskConfig::Housing(t) = &cfg.task {
        let here = crate::bench::experiment::housing_path(t, Path::new("."));
        if here.exists() {
            return PathBuf::from(".");
        }
    }
    config_base(config_path)
}

fn print_suite(r: &SuiteReport) {
    for row in &r.rows {
        println!(
            "{:<11} {:<44} {:>6} {:>6} {:>12.3e} {:>9.1e}  {}",
            r.suite.name(),
            row.name,
            row.cases,
            row.failures,
            row.worst,
            row.tolerance,
            if row.passed() { "pass" } else { "FAIL" }
        );
    }
}

fn cmd_verify(cli: &Cli, suite: SuiteArg, constant: ConstantArg, instances: usize, tables: usize) -> Result<i32> {
    let opts = VerifyOptions {
        seed: cli.seed.unwrap_or(0),
        constant: match constant {
            ConstantArg::Stated => BoundConstant::Stated,
            ConstantArg::ProofDerived => BoundConstant::ProofDerived,
        },
        instances,
        tables,
    };
    let suites: Vec<Suite> = match suite {
        SuiteArg::Identities => vec![Suite::Identities],
        SuiteArg::Gradients => vec![Suite::Gradients],
        SuiteArg::Attacks => vec![Suite::Attacks],
        SuiteArg::Bounds => vec![Suite::Bounds],
        SuiteArg::All => Suite::ALL.to_vec(),
    };
    println!("{:<11} {:<44} {:>6} {:>6} {:>12} {:>9}  result", "suite", "check", "cases", "fail", "worst", "tol");
    let mut reports = Vec::new();
    for s in suites {
        let r = run_suite(s, &opts)?;
        print_suite(&r);
        reports.push(r);
    }
    let mut m = Manifest::new("verify", None, Some(opts.seed));
    m.files.push("verify.json".into());
    write_text(&cli.out.join("verify.json"), &serde_json::to_string_pretty(&reports)?)?;
    m.write(&cli.out)?;
    Ok(if reports.iter().all(SuiteReport::passed) { EXIT_OK } else { EXIT_VIOLATION })
}

fn selected(cfg: &ExperimentConfig, m: MethodArg) -> Result<Vec<(Method, crate::trainer::TrainConfig)>> {
    let all: Vec<(Method, crate::trainer::TrainConfig)> = cfg.methods().into_iter().map(|(a, b)| (a, b.clone())).collect();
    let out: Vec<_> = all
        .into_iter()
        .filter(|(k, _)| match m {
            MethodArg::All => true,
            MethodArg::Baseline => *k == Method::Baseline,
            MethodArg::Sard => *k == Method::Sard,
        })
        .collect();
    if out.is_empty() {
        return Err(Error::Config("requested method has no section in the config".into()));
    }
    Ok(out)
}

fn train_into(cfg: &ExperimentConfig, base: &Path, seed: u64, method: MethodArg, dir: &Path, table: Option<&crate::bench::dataset::Table>) -> Result<()> {
    let data = build_task(cfg, seed, base, table)?;
    let mut manifest = Manifest::new("train", Some(cfg), Some(seed));
    for (m, tc) in selected(cfg, method)? {
        let tc = crate::trainer::TrainConfig {
            seed: tc.seed.wrapping_add(seed),
            ..tc
        };
        let out = train_method(m, &data, &cfg.rejector_hidden, &tc)?;
        let name = m.label();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        out.scorer.save(&dir.join(format!("{name}.ckpt.json")))?;
        write_history(&dir.join(format!("{name}.history.csv")), &out.history)?;
        let summary = TrainSummary {
            method: m,
            best_epoch: out.best_epoch,
            best_val_risk: out.best_val_risk,
            ledger: out.ledger,
        };
        write_text(&dir.join(format!("{name}.train.json")), &serde_json::to_string_pretty(&summary)?)?;
        println!(
            "{name}: best epoch {} validation risk {:.6} forward {} backward {}",
            summary.best_epoch,
            summary.best_val_risk,
            summary.ledger.forward_count(),
            summary.ledger.backward_count()
        );
        manifest.files.extend([format!("{name}.ckpt.json"), format!("{name}.history.csv"), format!("{name}.train.json")]);
    }
    manifest.write(dir)
}

fn cmd_train(cli: &Cli, config: &Path, method: MethodArg) -> Result<i32> {
    let cfg = load_config(config, cli.seed)?;
    train_into(&cfg, &base_for(&cfg, config), cfg.seed, method, &cli.out, None)?;
    Ok(EXIT_OK)
}

fn print_metrics(label: &str, m: &crate::trainer::Metrics) {
    let shares: Vec<String> = m.deferral.iter().map(|d| format!("{d:.4}")).collect();
    println!("{label:<10} {:<12} {} {:.6}  shares [{}]", m.mode, m.metric_name, m.metric, shares.join(", "));
}

fn cmd_attack(cli: &Cli, config: &Path, checkpoint: &Path, mode: ModeArg, target: Option<usize>) -> Result<i32> {
    let r = Scorer::load(checkpoint).map_err(|e| e.in_stage("checkpoint"))?;
    let cfg = load_config(config, cli.seed)?;
    let mode = match (mode, target) {
        (ModeArg::Clean, _) => AttackMode::Clean,
        (ModeArg::Untargeted, _) => AttackMode::Untargeted,
        (ModeArg::Targeted, Some(j)) => AttackMode::Targeted(j),
        (ModeArg::Targeted, None) => return Err(Error::Config("--mode targeted needs --target".into())),
    };
    let data = build_task(&cfg, cfg.seed, &base_for(&cfg, config), None)?;
    let m = evaluate(&r, &data.test, mode, &cfg.evaluation.attack, cfg.evaluation.u, cfg.seed)?;
    print_metrics("attack", &m);
    let file = format!("attack_{}.json", m.mode);
    write_text(&cli.out.join(&file), &serde_json::to_string_pretty(&m)?)?;
    let mut manifest = Manifest::new("attack", Some(&cfg), Some(cfg.seed));
    manifest.files.push(file);
    manifest.write(&cli.out)?;
    Ok(EXIT_OK)
}

fn evaluate_run(cfg: &ExperimentConfig, base: &Path, dir: &Path, seed: Option<u64>, table: Option<&crate::bench::dataset::Table>) -> Result<TrialResult> {
    let trained = Manifest::read(dir)?;
    if trained.config_digest.as_deref() != Some(cfg.digest().as_str()) {
        return Err(Error::Config(format!("{} was trained with a different config", dir.display())));
    }
    let seed = seed.or(trained.seed).ok_or_else(|| Error::Config("run has no seed".into()))?;
    let data = build_task(cfg, seed, base, table)?;
    let mut methods = Vec::new();
    for (m, _) in cfg.methods() {
        let ck = dir.join(format!("{}.ckpt.json", m.label()));
        if !ck.exists() {
            continue;
        }
        let r = Scorer::load(&ck)?;
        let sp = dir.join(format!("{}.train.json", m.label()));
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let summary: TrainSummary = serde_json::from_str(&text)?;
        let metrics = evaluate_modes(&r, &data, &cfg.evaluation, seed)?;
        for mm in &metrics {
            print_metrics(m.label(), mm);
        }
        methods.push(MethodTrial {
            method: m,
            best_epoch: summary.best_epoch,
            best_val_risk: summary.best_val_risk,
            ledger: summary.ledger,
            metrics,
        });
    }
    if methods.is_empty() {
        return Err(Error::Config(format!("no checkpoints in {}", dir.display())));
    }
    let trial = TrialResult {
        seed,
        agent_metrics: data.agent_metrics,
        methods,
    };
    write_text(&dir.join("trial.json"), &serde_json::to_string_pretty(&trial)?)?;
    Ok(trial)
}

fn cmd_evaluate(cli: &Cli, config: &Path, run: &Path) -> Result<i32> {
    let cfg = load_config(config, None)?;
    evaluate_run(&cfg, &base_for(&cfg, config), run, cli.seed, None)?;
    Ok(EXIT_OK)
}

fn run_dirs(runs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if runs.len() == 1 && !runs[0].join("trial.json").exists() {
        let rd = std::fs::read_dir(&runs[0]).map_err(|e| Error::io(&runs[0], e))?;
        let mut dirs: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("trial.json").exists())
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            return Err(Error::Config(format!("no evaluated runs under {}", runs[0].display())));
        }
        return Ok(dirs);
    }
    Ok(runs.to_vec())
}

fn cmd_report(cli: &Cli, runs: &[PathBuf]) -> Result<i32> {
    let dirs = run_dirs(runs)?;
    let mut trials = Vec::new();
    let mut digest: Option<String> = None;
    let mut task: Option<String> = None;
    for d in &dirs {
        let m = Manifest::read(d)?;
        if digest.is_some() && digest != m.config_digest {
            return Err(Error::Config(format!("{} comes from a different config", d.display())));
        }
        digest = m.config_digest.clone();
        task = m.task.clone();
        let p = d.join("trial.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        trials.push(serde_json::from_str::<TrialResult>(&text)?);
    }
    let report = aggregate(task.as_deref().unwrap_or("unknown"), digest.as_deref().unwrap_or(""), trials)?;
    finish_report(cli, &report)
}

fn finish_report(cli: &Cli, report: &crate::bench::experiment::Report) -> Result<i32> {
    report.write(&cli.out)?;
    print!("{}", report.to_csv()?);
    let mut m = Manifest::new("report", None, None);
    m.config_digest = Some(report.config_digest.clone());
    m.task = Some(report.task.clone());
    m.files = vec!["report.json".into(), "report.csv".into()];
    m.write(&cli.out)?;
    Ok(EXIT_OK)
}

fn cmd_run(cli: &Cli, config: &Path) -> Result<i32> {
    let cfg = load_config(config, cli.seed)?;
    let base = base_for(&cfg, config);
    let table = match &cfg.task {
        TaskConfig::Housing(t) => Some(load_housing(t, &base)?),
        _ => None,
    };
    let mut trials = Vec::new();
    for seed in cfg.trial_seeds() {
        let dir = cli.out.join(format!("seed_{seed}"));
        train_into(&cfg, &base, seed, MethodArg::All, &dir, table.as_ref())?;
        trials.push(evaluate_run(&cfg, &base, &dir, None, table.as_ref())?);
    }
    let report = aggregate(cfg.task.name(), &cfg.digest(), trials)?;
    finish_report(cli, &report)
}
