//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line
//! and fails when its criterion is not met.
//!
//! Run with `cargo test -p robust-l2d --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_l2d::attacks::{pgd, untargeted_attack, AttackSpec, Init, Norm, Sense};
use robust_l2d::bench::experiment::{housing_path, run_experiment, HOUSING_ENV, ExperimentConfig, Method, Report, TaskConfig};
use robust_l2d::bench::experts::{make_synthetic_experts, ScorerClassifier, SyntheticExpertSpec};
use robust_l2d::costs::{aggregate_costs, true_deferral_loss, AgentPool, AggregatedCosts, CostVector, Sample, TaskKind};
use robust_l2d::losses::{psi_rho, psi_u, PsiParams};
use robust_l2d::oracle::BoundConstant;
use robust_l2d::scorer::{Scorer, ScorerSpec};
use robust_l2d::trainer::{train_sard, CostLedger, DeferralData, OptimizerKind, Schedule, TrainConfig};
use robust_l2d::verify::{self, VerifyOptions};

fn report(n: u32, title: &str, pass: bool, detail: &str) {
    println!("criterion {n} {title:<38} {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({title}) failed: {detail}");
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

#[test]
fn criterion_1_deferral_identity() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for _ in 0..1000 {
        let j = rng.gen_range(0..=5usize);
        let c: Vec<f64> = (0..=j).map(|_| rng.gen_range(0.0..=2.0)).collect();
        let cv = CostVector::new(c.clone()).unwrap();
        let total: f64 = c.iter().sum();
        for chosen in 0..=j {
            // Indicator form against sum_{i != chosen} tau_i + (1 - J) sum c.
            let tau: Vec<f64> = (0..=j).map(|i| total - c[i]).collect();
            let miss: f64 = (0..=j).filter(|&i| i != chosen).map(|i| tau[i]).sum();
            let other = miss + (1.0 - j as f64) * total;
            let lib = true_deferral_loss(&cv, chosen).unwrap();
            worst = worst.max((c[chosen] - other).abs()).max((lib - c[chosen]).abs());
            let lib_tau = aggregate_costs(&cv);
            worst = worst.max((lib_tau.as_slice()[chosen] - tau[chosen]).abs());
            cases += 1;
        }
    }
    let el = t.elapsed();
    report(
        1,
        "deferral identity",
        worst <= 1e-12 && el < Duration::from_secs(1),
        &format!("{cases} cases, worst {worst:.3e}, {}", secs(el)),
    );
}

#[test]
fn criterion_2_transform_values() {
    let checks = [
        (psi_u(1.0, 1.0).unwrap(), 2f64.ln()),
        (psi_u(3.0, 0.5).unwrap(), 2.0),
        (psi_u(1.0, 2.0).unwrap(), 0.5),
        (psi_rho(-2.0, 0.7), 1.0),
        (psi_rho(0.0, 0.7), 1.0),
        (psi_rho(0.35, 0.7), 0.5),
        (psi_rho(0.7, 0.7), 0.0),
        (psi_rho(9.0, 0.7), 0.0),
    ];
    let worst = checks.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    report(2, "transform values", worst <= 1e-12, &format!("worst {worst:.3e}"));
}

#[test]
fn criterion_3_gradient_oracle() {
    let t = Instant::now();
    let row = verify::gradients(3, 100).unwrap();
    let el = t.elapsed();
    report(
        3,
        "gradient oracle",
        row.cases == 100 && row.passed() && row.worst < 1e-4 && el < Duration::from_secs(10),
        &format!("{} configs, {} failures, worst rel err {:.3e}, {}", row.cases, row.failures, row.worst, secs(el)),
    );
}

/// Box membership with the endpoints rounded the way `x0 +/- gamma` rounds.
fn in_linf_ball(x0: &[f64], x: &[f64], gamma: f64) -> bool {
    x0.iter().zip(x).all(|(c, v)| *v >= c - gamma && *v <= c + gamma)
}

fn in_l2_ball(x0: &[f64], x: &[f64], gamma: f64) -> bool {
    x0.iter().zip(x).map(|(c, v)| (v - c) * (v - c)).sum::<f64>().sqrt() <= gamma
}

#[test]
fn criterion_4_pgd_soundness() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut escapes = 0;
    for _ in 0..1000 {
        let d = rng.gen_range(1..=6);
        let agents = rng.gen_range(2..=4);
        let r = Scorer::init(ScorerSpec::mlp(d, &[rng.gen_range(2..=8)], agents), rng.gen()).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let tau = AggregatedCosts::from_weights((0..agents).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap();
        let gamma = rng.gen_range(0.01..2.0);
        let steps = rng.gen_range(1..=10);
        let two = rng.gen_bool(0.5);
        let mut spec = if two { AttackSpec::l2(gamma, steps) } else { AttackSpec::linf(gamma, steps) };
        spec = spec.with_step_size(gamma * rng.gen_range(0.1..3.0));
        if rng.gen_bool(0.5) {
            spec = spec.with_init(Init::RandomInBall);
        }
        let adv = untargeted_attack(&r, &tau, &x, &spec, 1.0, &mut rng).unwrap();
        let ok = match spec.p {
            Norm::Infinity => in_linf_ball(&x, &adv, gamma),
            Norm::Two => in_l2_ball(&x, &adv, gamma),
        };
        escapes += usize::from(!ok);
    }
    let mut mismatches = 0;
    for _ in 0..1000 {
        let d = rng.gen_range(1..=8);
        let g: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let gamma = rng.gen_range(0.01..1.0);
        let spec = AttackSpec::linf(gamma, 1).with_step_size(gamma);
        let mut obj = |z: &[f64]| -> robust_l2d::Result<(f64, Vec<f64>)> { Ok((z.iter().zip(&g).map(|(a, b)| a * b).sum(), g.clone())) };
        let out = pgd(&mut obj, &x0, &spec, Sense::Maximize, &mut rng).unwrap();
        let same = out
            .x
            .iter()
            .zip(x0.iter().zip(&g))
            .all(|(a, (c, gi))| a.to_bits() == (c + gamma * gi.signum()).to_bits());
        mismatches += usize::from(!same);
    }
    report(
        4,
        "PGD soundness",
        escapes == 0 && mismatches == 0,
        &format!("{escapes}/1000 escapes, {mismatches}/1000 closed-form mismatches"),
    );
}

#[test]
fn criterion_5_consistency_bounds() {
    let t = Instant::now();
    let rows = verify::bounds(&VerifyOptions::default()).unwrap();
    let el = t.elapsed();
    let detail = rows
        .iter()
        .map(|r| format!("{}: {}/{} violations, worst margin {:.3e}", r.name, r.failures, r.cases, r.worst))
        .collect::<Vec<_>>()
        .join("; ");
    report(
        5,
        "consistency bound verification",
        rows.iter().all(|r| r.passed() && r.cases == 100) && el < Duration::from_secs(300),
        &format!("{detail}; {}", secs(el)),
    );
}

/// Not a numbered criterion: with the constant the proof actually yields,
/// the same 100 instances hold.
#[test]
fn bounds_hold_with_proof_derived_constant() {
    let opts = VerifyOptions {
        constant: BoundConstant::ProofDerived,
        ..Default::default()
    };
    let rows = verify::bounds(&opts).unwrap();
    assert!(rows.iter().all(|r| r.passed()), "{rows:?}");
}

#[test]
fn criterion_6_epoch_cost_ledger() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples: Vec<Sample> = (0..110)
        .map(|_| Sample::classification(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], rng.gen_range(0..3)))
        .collect();
    let model = ScorerClassifier {
        scorer: Scorer::init(ScorerSpec::linear(2, 3), 1).unwrap(),
        features: None,
    };
    let specs = vec![
        SyntheticExpertSpec { assigned: vec![0, 1], p: 0.9, seed: 1 },
        SyntheticExpertSpec { assigned: vec![2], p: 0.9, seed: 2 },
    ];
    let mut agents: Vec<Box<dyn robust_l2d::costs::Agent>> = vec![Box::new(model)];
    agents.extend(make_synthetic_experts(&specs, 3).unwrap());
    let pool = AgentPool::new(agents, vec![0.0; 3]).unwrap();
    let all = DeferralData::build(&samples, &pool, TaskKind::Classification, None).unwrap();
    let train = all.subset(&(0..100).collect::<Vec<_>>());
    let val = all.subset(&(100..110).collect::<Vec<_>>());
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 32,
        learning_rate: 0.01,
        schedule: Schedule::Constant,
        optimizer: OptimizerKind::default(),
        weight_decay: 1e-4,
        psi: PsiParams { nu: 0.1, ..Default::default() },
        attack: AttackSpec::linf(0.1, 10).with_init(Init::RandomInBall),
        seed: 0,
    };
    let out = train_sard(&train, &val, &ScorerSpec::mlp(2, &[8], 3), &cfg).unwrap();
    let (f, b) = (out.ledger.forward_count(), out.ledger.backward_count());
    let expect = 100 * (1 + 3 * 10);
    report(
        6,
        "epoch cost ledger",
        f == expect && b == expect && CostLedger::expected_per_epoch(100, 3, 10) == expect,
        &format!("forward {f}, backward {b}, expected {expect}"),
    );
}

fn mode_metric(r: &Report, m: Method, mode: &str) -> f64 {
    r.method(m).and_then(|s| s.mode(mode)).map_or(f64::NAN, |s| s.metric.mean)
}

fn share(r: &Report, m: Method, mode: &str, agent: usize) -> f64 {
    r.method(m)
        .and_then(|s| s.mode(mode))
        .map_or(f64::NAN, |s| s.deferral[agent].mean)
}

/// Attacked-over-clean share ratio; a zero clean share gives 1 when the
/// attacked share is also zero and infinity otherwise.
fn share_ratio(clean: f64, attacked: f64) -> f64 {
    match (clean > 0.0, attacked > 0.0) {
        (true, _) => attacked / clean,
        (false, false) => 1.0,
        (false, true) => f64::INFINITY,
    }
}

#[test]
fn criterion_7_housing_reproduction() {
    let path = configs().join("housing.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    let TaskConfig::Housing(task) = &cfg.task else { panic!("housing config has another task") };
    let csv = housing_path(task, Path::new("."));
    let csv = if csv.exists() { csv } else { housing_path(task, &configs()) };
    if !csv.exists() {
        report(7, "housing reproduction", false, &format!("dataset not found at {} (set {HOUSING_ENV} to its location)", csv.display()));
        return;
    }
    let t = Instant::now();
    let r = run_experiment(&cfg, csv.parent().unwrap_or(Path::new("."))).unwrap();
    let el = t.elapsed();
    let bc = mode_metric(&r, Method::Baseline, "clean");
    let sc = mode_metric(&r, Method::Sard, "clean");
    let agents = r.agent_metrics.len();
    let mut attacked = vec![("untargeted".to_string(), mode_metric(&r, Method::Sard, "untargeted"))];
    for j in 0..agents {
        let m = format!("targeted_{j}");
        attacked.push((m.clone(), mode_metric(&r, Method::Sard, &m)));
    }
    let worst_sard = attacked.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
    let bt1 = mode_metric(&r, Method::Baseline, "targeted_1");
    let pass = (bc - 0.17).abs() <= 0.03
        && (sc - 0.17).abs() <= 0.03
        && worst_sard <= sc + 0.03
        && bt1 >= 1.5 * bc
        && r.seeds.len() == 4
        && el < Duration::from_secs(900);
    report(
        7,
        "housing reproduction",
        pass,
        &format!(
            "baseline clean {bc:.4}, SARD clean {sc:.4}, SARD worst attacked {worst_sard:.4}, baseline targ. M1 {bt1:.4} ({:.2}x), {}",
            bt1 / bc,
            secs(el)
        ),
    );
}

#[test]
fn criterion_8_synthetic_classification() {
    let path = configs().join("synthetic_classification.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    let t = Instant::now();
    let r = run_experiment(&cfg, &configs()).unwrap();
    let el = t.elapsed();
    let weak = r.agent_metrics.len() - 1;
    let target = format!("targeted_{weak}");
    let bc = mode_metric(&r, Method::Baseline, "clean");
    let sc = mode_metric(&r, Method::Sard, "clean");
    let bu = mode_metric(&r, Method::Baseline, "untargeted");
    let su = mode_metric(&r, Method::Sard, "untargeted");
    let b_ratio = share_ratio(share(&r, Method::Baseline, "clean", weak), share(&r, Method::Baseline, &target, weak));
    let s_ratio = share_ratio(share(&r, Method::Sard, "clean", weak), share(&r, Method::Sard, &target, weak));
    let a = bc >= sc - 0.03;
    let b = su - bu >= 0.15;
    let c = b_ratio >= 2.0 && s_ratio < 1.2 && s_ratio > 1.0 / 1.2;
    report(
        8,
        "synthetic classification ordering",
        a && b && c && el < Duration::from_secs(600),
        &format!(
            "(a) clean {:.2} vs {:.2}; (b) untargeted {:.2} vs {:.2}; (c) weak-expert share x{b_ratio:.2} baseline, x{s_ratio:.2} SARD; {}",
            100.0 * bc,
            100.0 * sc,
            100.0 * su,
            100.0 * bu,
            secs(el)
        ),
    );
}

const SMALL: &str = r#"
trials = 2
seed = 11
rejector_hidden = [8]

[task]
kind = "synthetic_classification"
n_train = 300
n_test = 100
experts = [{ assigned = [0, 1], p = 0.9 }, { assigned = [2], p = 0.9 }]
clusters = { classes = 4, dim = 6, robust_dims = 2, robust_scale = 3.0, nuisance_scale = 0.4 }
model_fit = { epochs = 20, batch_size = 100, learning_rate = 0.05 }

[sard]
epochs = 3
batch_size = 64
learning_rate = 0.01
psi = { u = 1.0, rho = 1.0, nu = 0.1 }
attack = { p = "inf", gamma = 0.2, steps = 3, step_size = 0.1, init = "random_in_ball" }

[evaluation]
attack = { p = "inf", gamma = 0.2, steps = 5, step_size = 0.05 }
"#;

fn cli_run(out: &Path, config: &Path) -> (i32, Vec<u8>, Vec<u8>) {
    let args = ["robust-l2d", "--seed", "5", "--out", out.to_str().unwrap(), "run", "--config", config.to_str().unwrap()];
    let code = robust_l2d::cli::run(args);
    (code, std::fs::read(out.join("report.json")).unwrap(), std::fs::read(out.join("report.csv")).unwrap())
}

#[test]
fn criterion_9_determinism() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let a = run_experiment(&cfg, Path::new(".")).unwrap();
    let b = run_experiment(&cfg, Path::new(".")).unwrap();
    let lib_same = a.to_json().unwrap() == b.to_json().unwrap() && a.to_csv().unwrap() == b.to_csv().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, SMALL).unwrap();
    let (c1, j1, v1) = cli_run(&dir.path().join("one"), &config);
    let (c2, j2, v2) = cli_run(&dir.path().join("two"), &config);
    let verify = |name: &str| {
        let out = dir.path().join(name);
        let code = robust_l2d::cli::run(["robust-l2d", "--out", out.to_str().unwrap(), "verify", "--suite", "attacks"]);
        (code, std::fs::read(out.join("verify.json")).unwrap())
    };
    let (vc1, vj1) = verify("v1");
    let (vc2, vj2) = verify("v2");
    let cli_same = c1 == 0 && c2 == 0 && j1 == j2 && v1 == v2 && vc1 == 0 && vc2 == 0 && vj1 == vj2;
    report(
        9,
        "determinism",
        lib_same && cli_same,
        &format!("library reports identical: {lib_same}; CLI run and verify outputs identical: {cli_same}"),
    );
}
