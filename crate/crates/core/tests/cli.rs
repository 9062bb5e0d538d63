//! End-to-end runs of the command-line tool on a tiny config.

use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
trials = 2
seed = 3
rejector_hidden = [6]

[task]
kind = "synthetic_classification"
n_train = 240
n_test = 80
experts = [{ assigned = [0, 1], p = 0.9 }, { assigned = [2], p = 0.9 }]
clusters = { classes = 4, dim = 6, robust_dims = 2, robust_scale = 3.0, nuisance_scale = 0.4 }
model_fit = { epochs = 10, batch_size = 80, learning_rate = 0.05 }

[baseline]
epochs = 2
batch_size = 64
learning_rate = 0.01
attack = { p = "inf", gamma = 0.0, steps = 1, step_size = 0.1 }

[sard]
epochs = 2
batch_size = 64
learning_rate = 0.01
psi = { u = 1.0, rho = 1.0, nu = 0.1 }
attack = { p = "inf", gamma = 0.2, steps = 2, step_size = 0.1 }

[evaluation]
attack = { p = "inf", gamma = 0.2, steps = 3, step_size = 0.1 }
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robust-l2d"))
}

fn run(args: &[&str]) -> std::process::Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_attack_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let mut runs = Vec::new();
    for seed in ["3", "4"] {
        let out = dir.path().join("runs").join(format!("seed_{seed}"));
        let o = run(&["--seed", seed, "--out", s(&out), "train", "--config", s(&cfg)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["baseline.ckpt.json", "sard.ckpt.json", "sard.history.csv", "manifest.json"] {
            assert!(out.join(f).exists(), "{f}");
        }
        let o = run(&["--seed", seed, "--out", s(&out), "evaluate", "--config", s(&cfg)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("trial.json").exists());
        runs.push(out);
    }
    let ckpt = runs[0].join("sard.ckpt.json");
    let o = run(&[
        "--seed", "3", "--out", s(&runs[0]), "attack", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--mode", "targeted", "--target", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let attack: serde_json::Value = serde_json::from_slice(&std::fs::read(runs[0].join("attack_targeted_2.json")).unwrap()).unwrap();
    assert!(attack.to_string().contains("targeted_2"), "{attack}");

    let rep = dir.path().join("report");
    let o = run(&["--out", s(&rep), "report", "--runs", s(&dir.path().join("runs"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(rep.join("report.csv")).unwrap();
    let csv = String::from_utf8(first.clone()).unwrap();
    assert!(csv.starts_with("method,mode,metric,mean,std,mean_cost,share_0,share_1,share_2"));
    assert!(csv.contains("sard,targeted_2,accuracy"));

    // Reporting again over unchanged runs is byte-identical.
    let o = run(&["--out", s(&rep), "report", "--runs", s(&runs[0]), s(&runs[1])]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(rep.join("report.csv")).unwrap(), first);
}

#[test]
fn unknown_config_key_fails_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, format!("{CONFIG}\nsurprise = 1\n")).unwrap();
    let out = dir.path().join("out");
    let o = run(&["--out", s(&out), "train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("surprise"));
    assert!(!out.join("sard.ckpt.json").exists());
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--out", s(dir.path()), "verify", "--suite", "identities"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("deferral identity"));
    let o = run(&["--out", s(dir.path()), "verify", "--suite", "bounds", "--instances", "10", "--tables", "5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["--out", s(dir.path()), "verify", "--suite", "bounds", "--constant", "proof-derived", "--instances", "10", "--tables", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["verify", "--suite", "everything"]);
    assert_eq!(o.status.code(), Some(1));
}
