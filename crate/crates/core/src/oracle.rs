//! Exact computations on finite problems: Bayes deferral, adversarial losses
//! over enumerated balls, and numerical checks of the consistency bounds for
//! the all-functions rejector class.
//!
//! Balls are explicit finite sets and are treated as disjoint, so a rejector
//! is any score table indexed by (point, ball member) and infima over the
//! class decompose point by point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{aggregate_costs, argmin, AggregatedCosts, CostVector};
use crate::error::{check_len, Error, Result};
use crate::losses::{adversarial_true_deferral_loss, margin_surrogate_pointwise, misroutes, psi_u, PsiParams};

pub const MAX_POINTS: usize = 8;
pub const MAX_BALL: usize = 6;
/// Largest agent count for which the surrogate infimum grid is affordable.
pub const MAX_GRID_AGENTS: usize = 5;
const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteProblem {
    pub points: Vec<Vec<f64>>,
    /// `balls[i][0]` is `points[i]`; the rest are its perturbations.
    pub balls: Vec<Vec<Vec<f64>>>,
    /// Conditional weights over agents at each point.
    pub probs: Vec<Vec<f64>>,
    pub costs: Vec<Vec<f64>>,
    /// Marginal weight of each point; uniform when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl FiniteProblem {
    pub fn num_agents(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n == 0 || n > MAX_POINTS {
            return Err(Error::Config(format!("finite problem needs 1..={MAX_POINTS} points, got {n}")));
        }
        check_len(n, self.balls.len(), "balls")?;
        check_len(n, self.probs.len(), "probabilities")?;
        check_len(n, self.costs.len(), "costs")?;
        let a = self.num_agents();
        if a < 2 {
            return Err(Error::Config("finite problem needs at least two agents".into()));
        }
        for i in 0..n {
            let ball = &self.balls[i];
            if ball.is_empty() || ball.len() > MAX_BALL {
                return Err(Error::Config(format!("ball {i} must hold 1..={MAX_BALL} points, got {}", ball.len())));
            }
            if ball[0] != self.points[i] {
                return Err(Error::Config(format!("ball {i} does not start with its center")));
            }
            check_len(a, self.probs[i].len(), "probabilities")?;
            check_len(a, self.costs[i].len(), "costs")?;
            let p = &self.probs[i];
            if p.iter().any(|v| !(*v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("probabilities at point {i} are not a distribution")));
            }
            CostVector::new(self.costs[i].clone())?;
        }
        if let Some(w) = &self.weights {
            check_len(n, w.len(), "point weights")?;
            if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Domain("point weights are not a distribution".into()));
            }
        }
        Ok(())
    }

    pub fn point_weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.points.len() as f64; self.points.len()])
    }

    pub fn aggregated(&self, i: usize) -> Result<AggregatedCosts> {
        Ok(aggregate_costs(&CostVector::new(self.costs[i].clone())?))
    }

    /// Random problem with Dirichlet(1) weights and uniform costs in `[0, 1)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, points: usize, ball: usize, agents: usize, dim: usize) -> Result<Self> {
        let mut pts = Vec::with_capacity(points);
        let mut balls = Vec::with_capacity(points);
        let mut probs = Vec::with_capacity(points);
        let mut costs = Vec::with_capacity(points);
        for i in 0..points {
            let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0) + 4.0 * i as f64).collect();
            let mut b = vec![c.clone()];
            for _ in 1..ball {
                b.push(c.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect());
            }
            pts.push(c);
            balls.push(b);
            probs.push(dirichlet_one(rng, agents));
            costs.push((0..agents).map(|_| rng.gen::<f64>()).collect());
        }
        let problem = Self {
            points: pts,
            balls,
            probs,
            costs,
            weights: None,
        };
        problem.validate()?;
        Ok(problem)
    }
}

fn dirichlet_one<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    let mut p: Vec<f64> = e.iter().map(|v| v / s).collect();
    // Push the rounding residue into the largest entry so the row sums to 1.
    let r = 1.0 - p.iter().sum::<f64>();
    let m = crate::costs::argmax(&p);
    p[m] += r;
    p
}

/// Rejector on a finite problem: `table[i][k][j]` is the score of agent `j` at
/// member `k` of ball `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreTable(pub Vec<Vec<Vec<f64>>>);

impl ScoreTable {
    pub fn validate(&self, problem: &FiniteProblem) -> Result<()> {
        check_len(problem.points.len(), self.0.len(), "score table points")?;
        for (i, rows) in self.0.iter().enumerate() {
            check_len(problem.balls[i].len(), rows.len(), "score table ball")?;
            for s in rows {
                check_len(problem.num_agents(), s.len(), "score table row")?;
            }
        }
        Ok(())
    }

    /// Same scores at every member of every ball.
    pub fn constant(problem: &FiniteProblem, per_point: &[Vec<f64>]) -> Self {
        ScoreTable(
            problem
                .balls
                .iter()
                .zip(per_point)
                .map(|(b, s)| vec![s.clone(); b.len()])
                .collect(),
        )
    }

    pub fn from_scorer(r: &crate::scorer::Scorer, problem: &FiniteProblem) -> Result<Self> {
        let mut t = Vec::with_capacity(problem.balls.len());
        for b in &problem.balls {
            t.push(b.iter().map(|x| r.forward(x).map(|s| s.0)).collect::<Result<Vec<_>>>()?);
        }
        Ok(ScoreTable(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesAllocation {
    pub allocation: Vec<usize>,
    pub risk: f64,
}

/// Per point, the agent with the lowest expected cost (lowest index on ties).
pub fn bayes_deferral(expected_costs: &[Vec<f64>], weights: &[f64]) -> Result<BayesAllocation> {
    check_len(expected_costs.len(), weights.len(), "point weights")?;
    let mut allocation = Vec::with_capacity(weights.len());
    let mut risk = 0.0;
    for (c, w) in expected_costs.iter().zip(weights) {
        if c.is_empty() {
            return Err(Error::Domain("empty cost row".into()));
        }
        let j = argmin(c);
        allocation.push(j);
        risk += w * c[j];
    }
    Ok(BayesAllocation { allocation, risk })
}

/// Exact adversarial quantities at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointLosses {
    /// Whether some ball member routes away from agent `j`.
    pub worst_case_miss: Vec<bool>,
    /// `sup` over the ball of the margin surrogate of agent `j`.
    pub margin_sup: Vec<f64>,
    pub true_deferral: f64,
    pub surrogate_deferral: f64,
}

pub fn exact_adversarial_losses(table: &ScoreTable, problem: &FiniteProblem, params: &PsiParams) -> Result<Vec<PointLosses>> {
    problem.validate()?;
    table.validate(problem)?;
    params.validate()?;
    let a = problem.num_agents();
    let mut out = Vec::with_capacity(problem.points.len());
    for (i, rows) in table.0.iter().enumerate() {
        let mut miss = vec![false; a];
        let mut sup = vec![f64::NEG_INFINITY; a];
        for s in rows {
            for j in 0..a {
                miss[j] |= misroutes(s, j);
                sup[j] = sup[j].max(margin_surrogate_pointwise(s, j, params)?);
            }
        }
        let c = CostVector::new(problem.costs[i].clone())?;
        let tau = aggregate_costs(&c);
        let true_deferral = adversarial_true_deferral_loss(&c, &tau, &miss)?;
        let surrogate_deferral = tau.as_slice().iter().zip(&sup).map(|(t, v)| t * v).sum();
        out.push(PointLosses {
            worst_case_miss: miss,
            margin_sup: sup,
            true_deferral,
            surrogate_deferral,
        });
    }
    Ok(out)
}

/// `sum_j w_j 1{some member misroutes j}` for the table rows of one ball.
fn weighted_miss(w: &[f64], rows: &[Vec<f64>]) -> f64 {
    (0..w.len())
        .filter(|&j| rows.iter().any(|s| misroutes(s, j)))
        .map(|j| w[j])
        .sum()
}

fn weighted_margin_sup(w: &[f64], rows: &[Vec<f64>], params: &PsiParams) -> Result<f64> {
    let mut total = 0.0;
    for (j, wj) in w.iter().enumerate() {
        let mut m = f64::NEG_INFINITY;
        for s in rows {
            m = m.max(margin_surrogate_pointwise(s, j, params)?);
        }
        total += wj * m;
    }
    Ok(total)
}

/// Infimum of `sum_j w_j miss_j` over all tables on a ball of `ball` members,
/// by enumerating the routed agent at every member.
pub fn true_infimum(w: &[f64], ball: usize) -> f64 {
    let a = w.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; ball];
    loop {
        let v: f64 = (0..a)
            .filter(|j| labels.iter().any(|l| l != j))
            .map(|j| w[j])
            .sum();
        best = best.min(v);
        let mut k = 0;
        while k < ball {
            labels[k] += 1;
            if labels[k] < a {
                break;
            }
            labels[k] = 0;
            k += 1;
        }
        if k == ball {
            break;
        }
    }
    best
}

/// `sum_i w_[i] Psi^u(J - i)` with `w` sorted ascending.
pub fn surrogate_infimum_closed_form(w: &[f64], u: f64) -> Result<f64> {
    let mut s = w.to_vec();
    s.sort_by(f64::total_cmp);
    let j = s.len() as f64 - 1.0;
    let mut total = 0.0;
    for (i, v) in s.iter().enumerate() {
        total += v * psi_u(j - i as f64, u)?;
    }
    Ok(total)
}

/// Scores `rank(w_j) * rho`, the minimizer behind the closed form.
pub fn ranked_scores(w: &[f64], rho: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
    let mut s = vec![0.0; w.len()];
    for (rank, &j) in order.iter().enumerate() {
        s[j] = rank as f64 * rho;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfSearch {
    pub value: f64,
    pub grid_value: f64,
    pub inconclusive: bool,
}

fn weighted_surrogate(w: &[f64], s: &[f64], params: &PsiParams) -> Result<f64> {
    let mut t = 0.0;
    for (j, wj) in w.iter().enumerate() {
        t += wj * margin_surrogate_pointwise(s, j, params)?;
    }
    Ok(t)
}

/// Pattern search over every direction in `{-1, 0, 1}^(A-1)` (agent 0 stays
/// pinned), so groups of tied scores can move together instead of zigzagging
/// along a kink. Each step size allows a bounded number of moves.
fn coordinate_descent(w: &[f64], start: Vec<f64>, params: &PsiParams, h0: f64) -> Result<(f64, Vec<f64>)> {
    let free = start.len() - 1;
    let dirs: Vec<Vec<f64>> = (1..3usize.pow(free as u32))
        .map(|mut code| {
            (0..free)
                .map(|_| {
                    let d = (code % 3) as f64 - 1.0;
                    code /= 3;
                    d
                })
                .collect()
        })
        .filter(|d: &Vec<f64>| d.iter().any(|v| *v != 0.0))
        .collect();
    let mut s = start;
    let mut best = weighted_surrogate(w, &s, params)?;
    let mut h = h0;
    let mut t = s.clone();
    while h > 1e-10 * params.rho {
        let mut moves = 0;
        loop {
            let mut step: Option<(f64, usize)> = None;
            for (k, d) in dirs.iter().enumerate() {
                for i in 0..free {
                    t[i + 1] = s[i + 1] + h * d[i];
                }
                let v = weighted_surrogate(w, &t, params)?;
                if v < step.map_or(best, |b| b.0) {
                    step = Some((v, k));
                }
            }
            match step {
                Some((v, k)) if moves < 64 => {
                    for i in 0..free {
                        s[i + 1] += h * dirs[k][i];
                    }
                    best = v;
                    moves += 1;
                }
                _ => break,
            }
        }
        h /= 2.0;
    }
    Ok((best, s))
}

fn grid_search(w: &[f64], params: &PsiParams, half_width: f64) -> Result<(f64, Vec<f64>)> {
    let a = w.len();
    let step = params.rho / 4.0;
    let n = (2.0 * half_width / step).round() as usize + 1;
    let mut idx = vec![0usize; a - 1];
    let mut s = vec![0.0; a];
    let mut best = (f64::INFINITY, s.clone());
    loop {
        for k in 0..a - 1 {
            s[k + 1] = -half_width + idx[k] as f64 * step;
        }
        let v = weighted_surrogate(w, &s, params)?;
        if v < best.0 {
            best = (v, s.clone());
        }
        let mut k = 0;
        while k < a - 1 {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == a - 1 {
            break;
        }
    }
    Ok(best)
}

/// Infimum of `sum_j w_j Phi_j` over score vectors (equivalently over tables:
/// the sup over a ball is at least the value at any member and constant
/// tables attain it). Grid over `[-3 rho, 3 rho]` at `rho / 4` with agent 0
/// pinned at 0, refined by coordinate descent and checked against one random
/// restart; the grid is widened once if the restart wins.
pub fn surrogate_infimum<R: Rng + ?Sized>(w: &[f64], params: &PsiParams, rng: &mut R) -> Result<InfSearch> {
    let a = w.len();
    if !(2..=MAX_GRID_AGENTS).contains(&a) {
        return Err(Error::Config(format!("grid search supports 2..={MAX_GRID_AGENTS} agents, got {a}")));
    }
    let rho = params.rho;
    let restart: Vec<f64> = std::iter::once(0.0)
        .chain((1..a).map(|_| rng.gen_range(-3.0 * rho..3.0 * rho)))
        .collect();
    let (restart_v, _) = coordinate_descent(w, restart, params, rho / 2.0)?;
    let ranked = weighted_surrogate(w, &ranked_scores(w, rho), params)?;
    let mut inconclusive = false;
    let mut grid_value = f64::INFINITY;
    for half in [3.0 * rho, 6.0 * rho] {
        let (gv, gs) = grid_search(w, params, half)?;
        let (rv, _) = coordinate_descent(w, gs, params, rho / 8.0)?;
        grid_value = rv.min(gv);
        if restart_v >= grid_value - 1e-12 {
            inconclusive = false;
            break;
        }
        inconclusive = true;
    }
    Ok(InfSearch {
        value: grid_value.min(restart_v).min(ranked),
        grid_value,
        inconclusive,
    })
}

/// Constant in front of the surrogate excess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundConstant {
    /// `Psi^u(1)`, as the inequality is stated.
    Stated,
    /// `1 / Psi^u(1)`, what the final step of its proof establishes.
    ProofDerived,
}

impl BoundConstant {
    pub fn name(self) -> &'static str {
        match self {
            BoundConstant::Stated => "stated",
            BoundConstant::ProofDerived => "proof-derived",
        }
    }

    pub fn value(self, u: f64) -> Result<f64> {
        let p = psi_u(1.0, u)?;
        Ok(match self {
            BoundConstant::Stated => p,
            BoundConstant::ProofDerived => 1.0 / p,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// Point index for pointwise checks; absent for risk-level checks.
    pub point: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: String,
    pub constant: BoundConstant,
    pub constant_value: f64,
    pub u: f64,
    pub rho: f64,
    pub trials: usize,
    pub checks: usize,
    pub violations: usize,
    pub inconclusive: usize,
    pub worst_margin: f64,
    pub records: Vec<TrialRecord>,
}

impl BoundReport {
    fn from_records(kind: &str, constant: BoundConstant, params: &PsiParams, trials: usize, records: Vec<TrialRecord>) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            constant,
            constant_value: constant.value(params.u)?,
            u: params.u,
            rho: params.rho,
            trials,
            checks: records.len(),
            violations: records.iter().filter(|r| !r.pass).count(),
            inconclusive: records.iter().filter(|r| r.inconclusive).count(),
            worst_margin: records.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min),
            records,
        })
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Random score table for trial `t`: mixes scales, near-constant tables and
/// the surrogate-optimal constant table.
pub fn random_table<R: Rng + ?Sized>(rng: &mut R, problem: &FiniteProblem, rho: f64, weights_of: impl Fn(usize) -> Vec<f64>) -> ScoreTable {
    let a = problem.num_agents();
    let kind = rng.gen_range(0..10);
    let scale = [0.3, 1.0, 3.0][rng.gen_range(0..3)] * rho;
    let normal = |r: &mut R| -> f64 {
        let u1: f64 = 1.0 - r.gen::<f64>();
        let u2: f64 = r.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    ScoreTable(
        problem
            .balls
            .iter()
            .enumerate()
            .map(|(i, b)| {
                if kind == 0 {
                    return vec![ranked_scores(&weights_of(i), rho); b.len()];
                }
                let base: Vec<f64> = (0..a).map(|_| scale * normal(rng)).collect();
                b.iter()
                    .map(|_| {
                        if kind <= 3 {
                            base.iter().map(|v| v + 0.05 * rho * normal(rng)).collect()
                        } else {
                            (0..a).map(|_| scale * normal(rng)).collect()
                        }
                    })
                    .collect()
            })
            .collect(),
    )
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Pointwise check at every point of `trials` random tables:
/// `sum p_j l_j - inf <= C * (sum p_j Phi_j - inf)`.
pub fn verify_pointwise_bound(
    problem: &FiniteProblem,
    trials: usize,
    params: &PsiParams,
    constant: BoundConstant,
    seed: u64,
) -> Result<BoundReport> {
    problem.validate()?;
    params.validate()?;
    let c = constant.value(params.u)?;
    let infs: Vec<(f64, InfSearch)> = problem
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = trial_rng(seed ^ 0x9e37_79b9, i);
            Ok((true_infimum(p, problem.balls[i].len()), surrogate_infimum(p, params, &mut rng)?))
        })
        .collect::<Result<_>>()?;
    let per_trial: Vec<Vec<TrialRecord>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let table = random_table(&mut rng, problem, params.rho, |i| problem.probs[i].clone());
            let mut recs = Vec::with_capacity(problem.points.len());
            for (i, rows) in table.0.iter().enumerate() {
                let p = &problem.probs[i];
                let (l_inf, s_inf) = infs[i];
                let lhs = weighted_miss(p, rows) - l_inf;
                let rhs = c * (weighted_margin_sup(p, rows, params)? - s_inf.value);
                recs.push(TrialRecord {
                    trial: t,
                    point: Some(i),
                    lhs,
                    rhs,
                    margin: rhs - lhs,
                    pass: lhs <= rhs + BOUND_TOL,
                    inconclusive: s_inf.inconclusive,
                });
            }
            Ok(recs)
        })
        .collect::<Result<_>>()?;
    BoundReport::from_records("pointwise", constant, params, trials, per_trial.into_iter().flatten().collect())
}

/// Risk-level check with the model at its optimal cost:
/// `E[l_def excess] <= C * E[Phi_def excess]` for `trials` random tables.
pub fn verify_deferral_bound(
    problem: &FiniteProblem,
    trials: usize,
    params: &PsiParams,
    constant: BoundConstant,
    seed: u64,
) -> Result<BoundReport> {
    problem.validate()?;
    params.validate()?;
    let c = constant.value(params.u)?;
    let weights = problem.point_weights();
    let taus: Vec<AggregatedCosts> = (0..problem.points.len()).map(|i| problem.aggregated(i)).collect::<Result<_>>()?;
    let infs: Vec<(f64, InfSearch)> = taus
        .iter()
        .enumerate()
        .map(|(i, tau)| {
            let t = tau.as_slice();
            let mut rng = trial_rng(seed ^ 0x7f4a_7c15, i);
            let best = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok((t.iter().sum::<f64>() - best, surrogate_infimum(t, params, &mut rng)?))
        })
        .collect::<Result<_>>()?;
    let records: Vec<TrialRecord> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let table = random_table(&mut rng, problem, params.rho, |i| taus[i].as_slice().to_vec());
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            let mut inconclusive = false;
            for (i, rows) in table.0.iter().enumerate() {
                let tau = taus[i].as_slice();
                let (l_inf, s_inf) = infs[i];
                lhs += weights[i] * (weighted_miss(tau, rows) - l_inf);
                rhs += weights[i] * (weighted_margin_sup(tau, rows, params)? - s_inf.value);
                inconclusive |= s_inf.inconclusive;
            }
            rhs *= c;
            Ok(TrialRecord {
                trial: t,
                point: None,
                lhs,
                rhs,
                margin: rhs - lhs,
                pass: lhs <= rhs + BOUND_TOL,
                inconclusive,
            })
        })
        .collect::<Result<_>>()?;
    BoundReport::from_records("deferral", constant, params, trials, records)
}

/// Whether `smooth_surrogate(s_clean, sup, j) >= margin_surrogate(s', j)` at
/// every ball member, with the displacement sup taken exactly over the ball.
pub fn smooth_dominates_on_ball(rows: &[Vec<f64>], params: &PsiParams) -> Result<bool> {
    let clean = &rows[0];
    let a = clean.len();
    for j in 0..a {
        let base = crate::losses::pairwise_diffs(clean, j);
        let sup = rows
            .iter()
            .map(|s| crate::losses::pairwise_diffs(s, j).distance(&base))
            .fold(0.0, f64::max);
        let smooth = crate::losses::smooth_surrogate(clean, sup, j, params)?;
        for s in rows {
            if margin_surrogate_pointwise(s, j, params)? > smooth + 1e-12 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
