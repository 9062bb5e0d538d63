//! Surrogate loss family for deferral.
//!
//! Scores are indexed by agent. All pairwise transforms take the margin of the
//! assigned agent over a competitor, `s[j] - s[j']`, so the margin transform
//! equals one at a non-positive margin and zero once the margin reaches `rho`.

use serde::{Deserialize, Serialize};

use crate::costs::{AggregatedCosts, CostVector};
use crate::error::{Error, Result};

/// Log of the largest inner sum fed to the `u != 1` power (`ln 1e300`).
const MAX_LOG_INNER: f64 = 690.775_527_898_213_7;

/// Hyperparameters of the surrogate family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiParams {
    /// Comp-sum exponent, `u > 0`. `u = 1` is the logistic (cross-entropy) case.
    pub u: f64,
    /// Margin width, `rho > 0`.
    pub rho: f64,
    /// Weight of the smooth robustness term, `nu >= 0`.
    pub nu: f64,
}

impl Default for PsiParams {
    fn default() -> Self {
        Self {
            u: 1.0,
            rho: 1.0,
            nu: 0.0,
        }
    }
}

impl PsiParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0) || !self.u.is_finite() {
            return Err(Error::Domain(format!("u must be > 0, got {}", self.u)));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Domain(format!("rho must be > 0, got {}", self.rho)));
        }
        if !(self.nu >= 0.0) || !self.nu.is_finite() {
            return Err(Error::Domain(format!("nu must be >= 0, got {}", self.nu)));
        }
        Ok(())
    }
}

/// `Psi^u(v)`: `log(1+v)` for `u = 1`, `((1+v)^(1-u) - 1) / (1-u)` otherwise.
pub fn psi_u(v: f64, u: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("psi_u needs v >= 0, got {v}")));
    }
    if !(u > 0.0) {
        return Err(Error::Domain(format!("psi_u needs u > 0, got {u}")));
    }
    Ok(psi_u_of_log(v.ln_1p(), u))
}

/// `Psi^u` evaluated from `l = ln(1 + v)`.
fn psi_u_of_log(l: f64, u: f64) -> f64 {
    if u == 1.0 {
        l
    } else {
        let a = 1.0 - u;
        (a * l.min(MAX_LOG_INNER)).exp_m1() / a
    }
}

/// `Psi_rho(v) = min(max(0, 1 - v/rho), 1)`.
pub fn psi_rho(v: f64, rho: f64) -> f64 {
    (1.0 - v / rho).clamp(0.0, 1.0)
}

/// Score vector `s[j] = r(x, j)` over all agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        crate::costs::argmax(&self.0)
    }

    /// Entries divided by `rho`.
    pub fn scaled(&self, rho: f64) -> ScoreVector {
        ScoreVector(self.0.iter().map(|v| v / rho).collect())
    }

    pub fn pairwise_diffs(&self, j: usize) -> PairwiseDiffs {
        pairwise_diffs(&self.0, j)
    }
}

impl From<Vec<f64>> for ScoreVector {
    fn from(v: Vec<f64>) -> Self {
        ScoreVector(v)
    }
}

/// `(s[j] - s[j'])` for every `j' != j`, in increasing `j'`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDiffs(pub Vec<f64>);

pub fn pairwise_diffs(s: &[f64], j: usize) -> PairwiseDiffs {
    PairwiseDiffs(
        s.iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, v)| s[j] - v)
            .collect(),
    )
}

impl PairwiseDiffs {
    /// Euclidean distance between two difference vectors.
    pub fn distance(&self, other: &PairwiseDiffs) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn check_agent(s: &[f64], j: usize) -> Result<()> {
    if j >= s.len() {
        return Err(Error::AgentIndex {
            index: j,
            len: s.len(),
        });
    }
    Ok(())
}

/// `ln(sum_k exp(s_k)) - s[j]`, i.e. `ln(1 + sum_{k != j} exp(-(s[j] - s[k])))`.
fn log_one_plus_inner(s: &[f64], j: usize) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = s.iter().map(|v| (v - m).exp()).sum();
    // Non-negative in exact arithmetic; clamp rounding.
    (m + sum.ln() - s[j]).max(0.0)
}

/// Comp-sum surrogate `Psi^u(sum_{j' != j} exp(-(s[j] - s[j'])))`.
pub fn comp_sum_surrogate(s: &[f64], j: usize, u: f64) -> Result<f64> {
    check_agent(s, j)?;
    if !(u > 0.0) {
        return Err(Error::Domain(format!("u must be > 0, got {u}")));
    }
    Ok(psi_u_of_log(log_one_plus_inner(s, j), u))
}

/// Value and gradient with respect to the scores of the comp-sum surrogate.
///
/// The gradient is `(1 + S)^(1-u) * (softmax(s) - e_j)` where `S` is the inner sum.
pub fn comp_sum_surrogate_grad(s: &[f64], j: usize, u: f64) -> Result<(f64, Vec<f64>)> {
    check_agent(s, j)?;
    if !(u > 0.0) {
        return Err(Error::Domain(format!("u must be > 0, got {u}")));
    }
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let l = (m + z.ln() - s[j]).max(0.0);
    let value = psi_u_of_log(l, u);
    let scale = if u == 1.0 {
        1.0
    } else {
        ((1.0 - u) * l.min(MAX_LOG_INNER)).exp()
    };
    let grad = exps
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let p = e / z;
            scale * if k == j { p - 1.0 } else { p }
        })
        .collect();
    Ok((value, grad))
}

/// Pointwise margin surrogate `Psi^u(sum_{j' != j} Psi_rho(s[j] - s[j']))`.
pub fn margin_surrogate_pointwise(s: &[f64], j: usize, params: &PsiParams) -> Result<f64> {
    check_agent(s, j)?;
    let inner: f64 = s
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != j)
        .map(|(_, v)| psi_rho(s[j] - v, params.rho))
        .sum();
    psi_u(inner, params.u)
}

/// Smooth adversarial surrogate: comp-sum on `s / rho` plus `nu` times the
/// supremum of the pairwise-difference displacement, supplied by the caller.
pub fn smooth_surrogate(
    s_clean: &[f64],
    sup_diff_norm: f64,
    j: usize,
    params: &PsiParams,
) -> Result<f64> {
    if !(sup_diff_norm >= 0.0) {
        return Err(Error::Domain(format!(
            "supremum of the displacement norm must be >= 0, got {sup_diff_norm}"
        )));
    }
    let scaled: Vec<f64> = s_clean.iter().map(|v| v / params.rho).collect();
    Ok(comp_sum_surrogate(&scaled, j, params.u)? + params.nu * sup_diff_norm)
}

/// `sum_j tau[j] * per_agent_loss[j]`.
pub fn deferral_surrogate(tau: &AggregatedCosts, per_agent_loss: &[f64]) -> Result<f64> {
    if tau.len() != per_agent_loss.len() {
        return Err(Error::LengthMismatch {
            left: tau.len(),
            right: per_agent_loss.len(),
            context: "aggregated costs vs per-agent losses",
        });
    }
    Ok(tau
        .as_slice()
        .iter()
        .zip(per_agent_loss)
        .map(|(t, l)| t * l)
        .sum())
}

/// Clean deferral surrogate with comp-sum per-agent losses.
pub fn comp_sum_deferral(tau: &AggregatedCosts, s: &[f64], u: f64) -> Result<f64> {
    let losses = (0..s.len())
        .map(|j| comp_sum_surrogate(s, j, u))
        .collect::<Result<Vec<_>>>()?;
    deferral_surrogate(tau, &losses)
}

/// Value and score-gradient of `sum_j tau[j] * comp_sum(s, j, u)`.
pub fn comp_sum_deferral_grad(tau: &AggregatedCosts, s: &[f64], u: f64) -> Result<(f64, Vec<f64>)> {
    if tau.len() != s.len() {
        return Err(Error::LengthMismatch {
            left: tau.len(),
            right: s.len(),
            context: "aggregated costs vs scores",
        });
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; s.len()];
    for (j, &t) in tau.as_slice().iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        let (v, g) = comp_sum_surrogate_grad(s, j, u)?;
        value += t * v;
        for (acc, gk) in grad.iter_mut().zip(&g) {
            *acc += t * gk;
        }
    }
    Ok((value, grad))
}

/// Adversarial true deferral loss in complement form:
/// `sum_j tau[j] miss[j] + (1 - J) sum_j c[j]`.
pub fn adversarial_true_deferral_loss(
    c: &CostVector,
    tau: &AggregatedCosts,
    worst_case_miss: &[bool],
) -> Result<f64> {
    if c.len() != tau.len() || c.len() != worst_case_miss.len() {
        return Err(Error::LengthMismatch {
            left: c.len(),
            right: worst_case_miss.len().min(tau.len()),
            context: "costs, aggregated costs and miss indicators",
        });
    }
    let j = c.num_experts() as f64;
    let miss: f64 = tau
        .as_slice()
        .iter()
        .zip(worst_case_miss)
        .filter(|(_, m)| **m)
        .map(|(t, _)| t)
        .sum();
    Ok(miss + (1.0 - j) * c.total())
}

/// `1{argmax(s) != j}` with ties counted as a miss.
pub fn misroutes(s: &[f64], j: usize) -> bool {
    s.iter()
        .enumerate()
        .any(|(k, v)| k != j && *v >= s[j])
}
