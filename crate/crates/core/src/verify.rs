//! Property suites run by `robust-l2d verify` and the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{contains, distance, pgd, AttackSpec, Init, Sense};
use crate::costs::{deferral_loss_complement_form, true_deferral_loss, AggregatedCosts, CostVector};
use crate::error::{Error, Result};
use crate::losses::{comp_sum_deferral, comp_sum_deferral_grad, psi_rho, psi_u, PsiParams};
use crate::oracle::{verify_deferral_bound, verify_pointwise_bound, BoundConstant, FiniteProblem};
use crate::scorer::{Scorer, ScorerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Identities,
    Gradients,
    Attacks,
    Bounds,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Identities, Suite::Gradients, Suite::Attacks, Suite::Bounds];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Identities => "identities",
            Suite::Gradients => "gradients",
            Suite::Attacks => "attacks",
            Suite::Bounds => "bounds",
        }
    }
}

/// One named check inside a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest error (or smallest margin for bounds) observed.
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub rows: Vec<CheckRow>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub constant: BoundConstant,
    /// Instances for the bound suite.
    pub instances: usize,
    /// Random score tables per instance.
    pub tables: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            constant: BoundConstant::Stated,
            instances: 100,
            tables: 20,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteReport> {
    let rows = match suite {
        Suite::Identities => identities(opts.seed)?,
        Suite::Gradients => vec![gradients(opts.seed, 100)?],
        Suite::Attacks => attacks(opts.seed)?,
        Suite::Bounds => bounds(opts)?,
    };
    Ok(SuiteReport { suite, rows })
}

fn row(name: &str, errs: &[f64], tol: f64) -> CheckRow {
    CheckRow {
        name: name.into(),
        cases: errs.len(),
        failures: errs.iter().filter(|e| !(**e <= tol)).count(),
        worst: errs.iter().copied().fold(0.0, f64::max),
        tolerance: tol,
    }
}

/// Deferral-loss identity over random cost vectors, and fixed transform values.
pub fn identities(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errs = Vec::new();
    for _ in 0..1000 {
        let experts = rng.gen_range(0..=5);
        let c = CostVector::new((0..=experts).map(|_| rng.gen_range(0.0..=2.0)).collect())?;
        for chosen in 0..c.len() {
            let a = true_deferral_loss(&c, chosen)?;
            let b = deferral_loss_complement_form(&c, chosen)?;
            errs.push((a - b).abs());
        }
    }
    let transforms = [
        (psi_u(1.0, 1.0)?, std::f64::consts::LN_2),
        (psi_u(3.0, 0.5)?, 2.0),
        (psi_u(1.0, 2.0)?, 0.5),
        (psi_rho(-0.5, 1.0), 1.0),
        (psi_rho(0.0, 1.0), 1.0),
        (psi_rho(0.25, 0.5), 0.5),
        (psi_rho(0.5, 0.5), 0.0),
        (psi_rho(3.0, 0.5), 0.0),
    ];
    let t: Vec<f64> = transforms.iter().map(|(a, b)| (a - b).abs()).collect();
    Ok(vec![row("deferral identity", &errs, 1e-12), row("transform values", &t, 1e-12)])
}

fn random_spec(rng: &mut ChaCha8Rng) -> ScorerSpec {
    let input = rng.gen_range(1..=6);
    let output = rng.gen_range(2..=5);
    if rng.gen_bool(0.3) {
        ScorerSpec::linear(input, output)
    } else {
        let hidden: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(2..=8)).collect();
        ScorerSpec::mlp(input, &hidden, output)
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = a.iter().chain(b).map(|v| v.abs()).fold(1e-8, f64::max);
    num / den
}

/// Central differences against backpropagation of the comp-sum deferral
/// loss, with respect to parameters and inputs, for `configs` random scorers.
pub fn gradients(seed: u64, configs: usize) -> Result<CheckRow> {
    let errs: Vec<f64> = (0..configs)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
            let spec = random_spec(&mut rng);
            let mut r = Scorer::init(spec.clone(), rng.gen())?;
            for p in r.params_mut() {
                *p += 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            }
            let x: Vec<f64> = (0..spec.input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let tau = AggregatedCosts::from_weights((0..spec.output_dim).map(|_| rng.gen_range(0.0..2.0)).collect())?;
            let u = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
            let s = r.forward(&x)?;
            let (_, gs) = comp_sum_deferral_grad(&tau, s.as_slice(), u)?;
            let gp = r.grad_params(&x, &gs)?;
            let gx = r.grad_input(&x, &gs)?;
            let loss = |r: &Scorer, x: &[f64]| -> Result<f64> { comp_sum_deferral(&tau, r.forward(x)?.as_slice(), u) };
            let mut fd_p = Vec::with_capacity(gp.len());
            for i in 0..gp.len() {
                let h = 1e-5 * r.params()[i].abs().max(1.0);
                let mut plus = r.clone();
                plus.params_mut()[i] += h;
                let mut minus = r.clone();
                minus.params_mut()[i] -= h;
                fd_p.push((loss(&plus, &x)? - loss(&minus, &x)?) / (2.0 * h));
            }
            let mut fd_x = Vec::with_capacity(x.len());
            for i in 0..x.len() {
                let h = 1e-5 * x[i].abs().max(1.0);
                let mut a = x.clone();
                a[i] += h;
                let mut b = x.clone();
                b[i] -= h;
                fd_x.push((loss(&r, &a)? - loss(&r, &b)?) / (2.0 * h));
            }
            Ok(rel_err(&gp, &fd_p).max(rel_err(&gx, &fd_x)))
        })
        .collect::<Result<_>>()?;
    Ok(row("scorer gradients (central differences)", &errs, 1e-4))
}

/// Ball containment of random attacks and the one-step sign identity on
/// linear objectives.
pub fn attacks(seed: u64) -> Result<Vec<CheckRow>> {
    let contained: Vec<f64> = (0..1000)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let spec = random_spec(&mut rng);
            let r = Scorer::init(spec.clone(), rng.gen())?;
            let x: Vec<f64> = (0..spec.input_dim).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
            let tau = AggregatedCosts::from_weights((0..spec.output_dim).map(|_| rng.gen_range(0.0..2.0)).collect())?;
            let gamma = rng.gen_range(0.01..2.0);
            let steps = rng.gen_range(1..=10);
            let mut a = if rng.gen_bool(0.5) { AttackSpec::linf(gamma, steps) } else { AttackSpec::l2(gamma, steps) };
            a = a.with_step_size(gamma * rng.gen_range(0.1..3.0));
            if rng.gen_bool(0.5) {
                a = a.with_init(Init::RandomInBall);
            }
            let adv = crate::attacks::untargeted_attack(&r, &tau, &x, &a, 1.0, &mut rng)?;
            // Excess over the radius for escapes, zero when contained.
            Ok(if contains(&x, &adv, &a) {
                0.0
            } else {
                (distance(&x, &adv, a.p) - gamma).max(f64::MIN_POSITIVE)
            })
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let mut mismatches = Vec::new();
    for _ in 0..1000 {
        let d = rng.gen_range(1..=8);
        let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let gamma = rng.gen_range(0.01..1.0);
        let spec = AttackSpec::linf(gamma, 1).with_step_size(gamma);
        let mut obj = |z: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((z.iter().zip(&w).map(|(a, b)| a * b).sum(), w.clone())) };
        let out = pgd(&mut obj, &x0, &spec, Sense::Maximize, &mut rng)?;
        let expect: Vec<f64> = x0.iter().zip(&w).map(|(c, g)| c + gamma * g.signum()).collect();
        let same = out.x.iter().zip(&expect).all(|(a, b)| a.to_bits() == b.to_bits());
        mismatches.push(if same { 0.0 } else { 1.0 });
    }
    Ok(vec![row("ball containment", &contained, 0.0), row("one-step sign closed form", &mismatches, 0.0)])
}

/// Random finite instances with at most 4 agents, 5 points and 4-element
/// balls; each runs the pointwise and deferral bound checks.
pub fn bounds(opts: &VerifyOptions) -> Result<Vec<CheckRow>> {
    let params = PsiParams::default();
    let results: Vec<(f64, f64)> = (0..opts.instances)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0xb0_0000 + k as u64));
            let agents = rng.gen_range(2..=4);
            let points = rng.gen_range(1..=5);
            let ball = rng.gen_range(1..=4);
            let problem = FiniteProblem::random(&mut rng, points, ball, agents, 2)?;
            let s = rng.gen();
            let pw = verify_pointwise_bound(&problem, opts.tables, &params, opts.constant, s)?;
            let dw = verify_deferral_bound(&problem, opts.tables, &params, opts.constant, s)?;
            Ok((pw.worst_margin, dw.worst_margin))
        })
        .collect::<Result<_>>()?;
    let mk = |name: &str, m: Vec<f64>| CheckRow {
        name: name.into(),
        cases: m.len(),
        failures: m.iter().filter(|v| !(**v >= -1e-9)).count(),
        worst: m.iter().copied().fold(f64::INFINITY, f64::min),
        tolerance: 1e-9,
    };
    if results.is_empty() {
        return Err(Error::Config("bound suite needs at least one instance".into()));
    }
    Ok(vec![
        mk(&format!("pointwise bound ({} constant)", opts.constant.name()), results.iter().map(|r| r.0).collect()),
        mk(&format!("deferral bound ({} constant)", opts.constant.name()), results.iter().map(|r| r.1).collect()),
    ])
}
