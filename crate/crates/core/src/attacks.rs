//! Projected gradient attacks over `l_inf` and `l_2` balls.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::costs::AggregatedCosts;
use crate::error::{check_len, Error, Result};
use crate::losses::{comp_sum_deferral_grad, comp_sum_surrogate_grad, pairwise_diffs};
use crate::scorer::{ForwardCache, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[serde(alias = "inf", alias = "linf")]
    Infinity,
    #[serde(alias = "l2", alias = "2")]
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    AtCenter,
    RandomInBall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub p: Norm,
    pub gamma: f64,
    pub steps: usize,
    pub step_size: f64,
    #[serde(default = "default_init")]
    pub init: Init,
    /// Optional box `[lo, hi]` applied to every coordinate after projection.
    #[serde(default)]
    pub clamp: Option<(f64, f64)>,
}

fn default_init() -> Init {
    Init::AtCenter
}

impl AttackSpec {
    /// `l_inf` attack with `steps` iterations of size `gamma / steps`.
    pub fn linf(gamma: f64, steps: usize) -> Self {
        Self {
            p: Norm::Infinity,
            gamma,
            steps,
            step_size: gamma / steps.max(1) as f64,
            init: Init::AtCenter,
            clamp: None,
        }
    }

    pub fn l2(gamma: f64, steps: usize) -> Self {
        Self {
            p: Norm::Two,
            ..Self::linf(gamma, steps)
        }
    }

    pub fn with_step_size(mut self, step_size: f64) -> Self {
        self.step_size = step_size;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    /// `gamma = 0` is accepted and turns every attack into the identity.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("attack radius must be >= 0, got {}", self.gamma)));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack steps must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step size must be > 0, got {}", self.step_size)));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo <= hi) {
                return Err(Error::Config(format!("clamp box [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }
}

/// `||a - b||_p`.
pub fn distance(a: &[f64], b: &[f64], p: Norm) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| x - y);
    match p {
        Norm::Infinity => d.fold(0.0, |m, v| m.max(v.abs())),
        Norm::Two => d.map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// Membership in the ball as represented in floating point: the box
/// `[x0 - gamma, x0 + gamma]` with rounded endpoints for `l_inf`, and a
/// computed norm of at most `gamma` for `l_2`.
pub fn contains(x0: &[f64], x: &[f64], spec: &AttackSpec) -> bool {
    if x0.len() != x.len() {
        return false;
    }
    let g = spec.gamma;
    match spec.p {
        Norm::Infinity => x0.iter().zip(x).all(|(&c, &v)| v >= c - g && v <= c + g),
        Norm::Two => distance(x, x0, Norm::Two) <= g,
    }
}

/// Nearest point of `B_p(x0, gamma)` to `x`; the result always satisfies
/// [`contains`].
pub fn project(x0: &[f64], x: &[f64], spec: &AttackSpec) -> Result<Vec<f64>> {
    check_len(x0.len(), x.len(), "projection")?;
    let g = spec.gamma;
    let out = match spec.p {
        Norm::Infinity => x0.iter().zip(x).map(|(&c, &v)| v.clamp(c - g, c + g)).collect(),
        Norm::Two => {
            let n = distance(x, x0, Norm::Two);
            if n <= g {
                x.to_vec()
            } else {
                let mut scale = g / n;
                loop {
                    let out: Vec<f64> = x0.iter().zip(x).map(|(c, v)| c + (v - c) * scale).collect();
                    if distance(&out, x0, Norm::Two) <= g {
                        break out;
                    }
                    scale *= 1.0 - 1e-15;
                }
            }
        }
    };
    Ok(out)
}

fn apply_clamp(x: &mut [f64], spec: &AttackSpec) {
    if let Some((lo, hi)) = spec.clamp {
        for v in x {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Differentiable scalar objective of the input.
pub trait Objective {
    fn value_and_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn value_and_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Debug, Clone)]
pub struct PgdOutcome {
    /// Best point seen.
    pub x: Vec<f64>,
    pub value: f64,
    /// Which evaluation produced the best point.
    pub best_eval: usize,
    pub evaluations: usize,
    /// Best value after each evaluation.
    pub trace: Vec<f64>,
}

fn initial_point<R: Rng + ?Sized>(x0: &[f64], spec: &AttackSpec, rng: &mut R) -> Result<Vec<f64>> {
    let mut x = match spec.init {
        Init::AtCenter => x0.to_vec(),
        Init::RandomInBall => {
            let g = spec.gamma;
            match spec.p {
                Norm::Infinity => x0.iter().map(|c| c + g * rng.gen_range(-1.0..=1.0)).collect(),
                Norm::Two => {
                    let dir: Vec<f64> = (0..x0.len()).map(|_| StandardNormal.sample(rng)).collect();
                    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let r = g * rng.gen::<f64>().powf(1.0 / x0.len().max(1) as f64);
                    let k = if n > 0.0 { r / n } else { 0.0 };
                    x0.iter().zip(&dir).map(|(c, d)| c + k * d).collect()
                }
            }
        }
    };
    apply_clamp(&mut x, spec);
    project(x0, &x, spec)
}

fn ascent_step(x: &[f64], g: &[f64], spec: &AttackSpec, sense: Sense, x0: &[f64]) -> Result<Vec<f64>> {
    let sign = match sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let a = sign * spec.step_size;
    let mut next: Vec<f64> = match spec.p {
        Norm::Infinity => x.iter().zip(g).map(|(v, d)| v + a * sgn(*d)).collect(),
        Norm::Two => {
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                x.to_vec()
            } else {
                x.iter().zip(g).map(|(v, d)| v + a * (d / n)).collect()
            }
        }
    };
    apply_clamp(&mut next, spec);
    project(x0, &next, spec)
}

#[inline]
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projected gradient ascent (or descent) from `x0`: `steps` projected steps,
/// `steps + 1` objective evaluations, best point returned.
pub fn pgd<O, R>(objective: &mut O, x0: &[f64], spec: &AttackSpec, sense: Sense, rng: &mut R) -> Result<PgdOutcome>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    pgd_with_budget(objective, x0, spec, sense, rng, spec.steps + 1)
}

/// PGD that stops after exactly `evaluations` objective calls. The point
/// reached by the last step is evaluated; no step is taken after it.
pub fn pgd_with_budget<O, R>(
    objective: &mut O,
    x0: &[f64],
    spec: &AttackSpec,
    sense: Sense,
    rng: &mut R,
    evaluations: usize,
) -> Result<PgdOutcome>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    spec.validate()?;
    if evaluations == 0 {
        return Err(Error::Config("pgd needs at least one evaluation".into()));
    }
    let mut x = initial_point(x0, spec, rng)?;
    let mut best_x = x.clone();
    let mut best_v = f64::NAN;
    let mut best_eval = 0;
    let mut trace = Vec::with_capacity(evaluations);
    for k in 0..evaluations {
        let (v, g) = objective.value_and_grad(&x)?;
        check_len(x.len(), g.len(), "objective gradient")?;
        if !v.is_finite() || g.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite(format!(
                "pgd evaluation {k}: value {v}, gradient norm {}",
                g.iter().map(|d| d * d).sum::<f64>().sqrt()
            )));
        }
        let better = k == 0
            || match sense {
                Sense::Maximize => v > best_v,
                Sense::Minimize => v < best_v,
            };
        if better {
            best_v = v;
            best_eval = k;
            best_x.clone_from(&x);
        }
        trace.push(best_v);
        if k + 1 < evaluations {
            x = ascent_step(&x, &g, spec, sense, x0)?;
        }
    }
    Ok(PgdOutcome {
        x: best_x,
        value: best_v,
        best_eval,
        evaluations,
        trace,
    })
}

/// Maximizes `sum_j tau[j] * Phi_u(r(x'), j)` over the ball.
pub fn untargeted_attack<R: Rng + ?Sized>(
    r: &Scorer,
    tau: &AggregatedCosts,
    x: &[f64],
    spec: &AttackSpec,
    u: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_len(r.spec().output_dim, tau.len(), "aggregated costs")?;
    let mut obj = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let cache = r.forward_cached(z)?;
        let (v, gs) = comp_sum_deferral_grad(tau, cache.scores(), u)?;
        Ok((v, r.backward_input(&cache, &gs)?))
    };
    Ok(pgd(&mut obj, x, spec, Sense::Maximize, rng)?.x)
}

/// Minimizes `tau[target] * Phi_u(r(x'), target)` over the ball.
pub fn targeted_attack<R: Rng + ?Sized>(
    r: &Scorer,
    tau: &AggregatedCosts,
    x: &[f64],
    target: usize,
    spec: &AttackSpec,
    u: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_len(r.spec().output_dim, tau.len(), "aggregated costs")?;
    if target >= tau.len() {
        return Err(Error::AgentIndex {
            index: target,
            len: tau.len(),
        });
    }
    let w = tau[target];
    let mut obj = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let cache = r.forward_cached(z)?;
        let (v, gs) = comp_sum_surrogate_grad(cache.scores(), target, u)?;
        let gs: Vec<f64> = gs.iter().map(|g| w * g).collect();
        Ok((w * v, r.backward_input(&cache, &gs)?))
    };
    Ok(pgd(&mut obj, x, spec, Sense::Minimize, rng)?.x)
}

/// `||Dbar(s_adv, j) - Dbar(s_clean, j)||_2` and its gradient with respect to
/// `s_adv` (the gradient with respect to `s_clean` is its negation).
///
/// At zero displacement the norm is not differentiable; the subgradient
/// `n = (1, ..., 1) / sqrt(J)` is used there.
pub fn displacement_norm_grad(s_adv: &[f64], s_clean: &[f64], j: usize) -> Result<(f64, Vec<f64>)> {
    check_len(s_clean.len(), s_adv.len(), "score vectors")?;
    if j >= s_adv.len() {
        return Err(Error::AgentIndex {
            index: j,
            len: s_adv.len(),
        });
    }
    let a = pairwise_diffs(s_adv, j);
    let c = pairwise_diffs(s_clean, j);
    let d: Vec<f64> = a.0.iter().zip(&c.0).map(|(x, y)| x - y).collect();
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n: Vec<f64> = if d.is_empty() {
        Vec::new()
    } else if norm > 0.0 {
        d.iter().map(|v| v / norm).collect()
    } else {
        vec![1.0 / (d.len() as f64).sqrt(); d.len()]
    };
    let mut g = vec![0.0; s_adv.len()];
    let mut k = 0;
    for (i, gi) in g.iter_mut().enumerate() {
        if i == j {
            continue;
        }
        *gi = -n[k];
        k += 1;
    }
    g[j] = n.iter().sum();
    Ok((norm, g))
}

/// PGD estimate (a lower bound) of `sup_{x'} ||Dbar_r(x', j) - Dbar_r(x, j)||_2`.
pub fn smooth_sup<R: Rng + ?Sized>(r: &Scorer, x: &[f64], j: usize, spec: &AttackSpec, rng: &mut R) -> Result<f64> {
    let clean = r.forward(x)?;
    let mut obj = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let cache = r.forward_cached(z)?;
        let (v, gs) = displacement_norm_grad(cache.scores(), clean.as_slice(), j)?;
        Ok((v, r.backward_input(&cache, &gs)?))
    };
    Ok(pgd(&mut obj, x, spec, Sense::Maximize, rng)?.value.max(0.0))
}

/// Result of the per-agent inner maximization used during robust training.
#[derive(Debug, Clone)]
pub struct SupProbe {
    pub value: f64,
    pub x: Vec<f64>,
    /// Forward cache at the best point, reused by the update pass.
    pub cache: ForwardCache,
    /// Gradient of the displacement norm with respect to the adversarial scores.
    pub grad_scores: Vec<f64>,
}

/// Inner maximization for agent `j` with exactly `spec.steps` forward and
/// `spec.steps` backward traversals, given the clean forward cache.
pub fn smooth_sup_probe<R: Rng + ?Sized>(
    r: &Scorer,
    clean: &ForwardCache,
    j: usize,
    spec: &AttackSpec,
    rng: &mut R,
) -> Result<SupProbe> {
    let mut seen: Vec<(ForwardCache, Vec<f64>)> = Vec::with_capacity(spec.steps);
    let mut obj = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let cache = r.forward_cached(z)?;
        let (v, gs) = displacement_norm_grad(cache.scores(), clean.scores(), j)?;
        let gi = r.backward_input(&cache, &gs)?;
        seen.push((cache, gs));
        Ok((v, gi))
    };
    let out = pgd_with_budget(&mut obj, clean.input(), spec, Sense::Maximize, rng, spec.steps)?;
    let (cache, grad_scores) = seen.swap_remove(out.best_eval);
    Ok(SupProbe {
        value: out.value,
        x: out.x,
        cache,
        grad_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{aggregate_costs, CostVector};
    use crate::losses::comp_sum_surrogate;
    use crate::scorer::ScorerSpec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn linear(g: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| Ok((x.iter().zip(&g).map(|(a, b)| a * b).sum(), g.clone()))
    }

    #[test]
    fn projection_examples() {
        let s = AttackSpec::linf(0.1, 1);
        assert_eq!(project(&[0.0, 0.0], &[0.5, -0.05], &s).unwrap(), vec![0.1, -0.05]);
        assert_eq!(project(&[0.0, 0.0], &[0.05, 0.0], &s).unwrap(), vec![0.05, 0.0]);
        let s = AttackSpec::l2(1.0, 1);
        let p = project(&[0.0, 0.0], &[3.0, 4.0], &s).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert!(project(&[0.0], &[1.0, 2.0], &s).is_err());
    }

    #[test]
    fn one_step_linear_closed_form() {
        let g = vec![0.3, -2.0, 0.0, 1e-9];
        let x0 = vec![0.25, -0.5, 1.0, 0.0];
        let s = AttackSpec::linf(0.1, 1).with_step_size(0.1);
        let up = pgd(&mut linear(g.clone()), &x0, &s, Sense::Maximize, &mut rng()).unwrap();
        let expect: Vec<f64> = x0.iter().zip(&g).map(|(x, d)| x + 0.1 * sgn(*d)).collect();
        assert_eq!(up.x, expect);
        let down = pgd(&mut linear(g.clone()), &x0, &s, Sense::Minimize, &mut rng()).unwrap();
        let expect: Vec<f64> = x0.iter().zip(&g).map(|(x, d)| x - 0.1 * sgn(*d)).collect();
        assert_eq!(down.x, expect);
    }

    #[test]
    fn zero_gradient_stays_at_center() {
        let s = AttackSpec::linf(0.5, 5);
        let out = pgd(&mut linear(vec![0.0; 3]), &[1.0, 2.0, 3.0], &s, Sense::Maximize, &mut rng()).unwrap();
        assert_eq!(out.x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut obj = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((0.0, vec![f64::NAN])) };
        let err = pgd(&mut obj, &[0.0], &AttackSpec::linf(0.1, 2), Sense::Maximize, &mut rng());
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(AttackSpec::linf(-1.0, 3).validate().is_err());
        assert!(AttackSpec::linf(1.0, 0).validate().is_err());
        assert!(AttackSpec::linf(1.0, 3).with_step_size(0.0).validate().is_err());
        let s: AttackSpec = toml::from_str("p = \"infinity\"\ngamma = 0.1\nsteps = 3\nstep_size = 0.05\n").unwrap();
        assert_eq!(s.init, Init::AtCenter);
        assert!(toml::from_str::<AttackSpec>("p = \"two\"\ngamma = 1\nsteps = 1\nstep_size = 1\nbogus = 1\n").is_err());
    }

    fn lin_scorer(w: &[&[f64]]) -> Scorer {
        let out = w.len();
        let inp = w[0].len();
        let mut p: Vec<f64> = w.iter().flat_map(|r| r.iter().copied()).collect();
        p.extend(std::iter::repeat_n(0.0, out));
        Scorer::new(ScorerSpec::linear(inp, out), p).unwrap()
    }

    #[test]
    fn zero_radius_is_identity() {
        let r = lin_scorer(&[&[1.0, 2.0], &[-1.0, 0.5], &[0.0, 0.3]]);
        let tau = aggregate_costs(&CostVector::new(vec![1.0, 0.0, 2.0]).unwrap());
        let s = AttackSpec::linf(0.0, 4).with_step_size(0.1);
        let x = [0.3, -0.7];
        assert_eq!(untargeted_attack(&r, &tau, &x, &s, 1.0, &mut rng()).unwrap(), x);
        assert_eq!(targeted_attack(&r, &tau, &x, 2, &s, 1.0, &mut rng()).unwrap(), x);
        assert_eq!(smooth_sup(&r, &x, 1, &s, &mut rng()).unwrap(), 0.0);
        let s2 = s.clone().with_init(Init::RandomInBall);
        assert_eq!(smooth_sup(&r, &x, 0, &s2, &mut rng()).unwrap(), 0.0);
    }

    #[test]
    fn untargeted_one_hot_tau_matches_closed_form() {
        // tau one-hot on agent 0; linear scores; one l_inf step of size gamma.
        let r = lin_scorer(&[&[1.0, -2.0], &[0.5, 1.0]]);
        let tau = AggregatedCosts::from_weights(vec![1.0, 0.0]).unwrap();
        let x = [0.2, 0.1];
        let s = AttackSpec::linf(0.3, 1).with_step_size(0.3);
        let out = untargeted_attack(&r, &tau, &x, &s, 1.0, &mut rng()).unwrap();
        // d/dx log(1 + exp(s1 - s0)) has the sign of (w1 - w0) = (-0.5, 3).
        assert_eq!(out, vec![0.2 - 0.3, 0.1 + 0.3]);
        let v0 = comp_sum_surrogate(r.forward(&x).unwrap().as_slice(), 0, 1.0).unwrap();
        let v1 = comp_sum_surrogate(r.forward(&out).unwrap().as_slice(), 0, 1.0).unwrap();
        assert!(v1 > v0);
    }

    #[test]
    fn targeted_one_step_closed_form() {
        let r = lin_scorer(&[&[1.0, -2.0], &[0.5, 1.0]]);
        let tau = AggregatedCosts::from_weights(vec![2.0, 1.0]).unwrap();
        let x = [0.0, 0.0];
        let s = AttackSpec::linf(0.25, 1).with_step_size(0.25);
        let out = targeted_attack(&r, &tau, &x, 1, &s, 1.0, &mut rng()).unwrap();
        // Minimizing the surrogate of agent 1 moves along sign(w1 - w0).
        assert_eq!(out, vec![-0.25, 0.25]);
        assert!(targeted_attack(&r, &tau, &x, 2, &s, 1.0, &mut rng()).is_err());
    }

    #[test]
    fn smooth_sup_constant_scorer_is_zero() {
        let r = Scorer::zeros(ScorerSpec::mlp(3, &[4], 3)).unwrap();
        let s = AttackSpec::linf(1.0, 5).with_init(Init::RandomInBall);
        assert_eq!(smooth_sup(&r, &[0.1, 0.2, 0.3], 2, &s, &mut rng()).unwrap(), 0.0);
    }

    #[test]
    fn smooth_sup_two_agent_linear_is_exact() {
        // Displacement is (w0 - w1) . delta: sup is gamma * ||w0 - w1||_1 on l_inf.
        let r = lin_scorer(&[&[1.0, -2.0, 0.5], &[0.5, 1.0, 0.5]]);
        let gamma = 0.2;
        let exact = gamma * (0.5 + 3.0 + 0.0);
        let s = AttackSpec::linf(gamma, 10).with_step_size(gamma);
        let got = smooth_sup(&r, &[0.3, 0.1, -0.4], 0, &s, &mut rng()).unwrap();
        assert!((got - exact).abs() < 1e-12, "{got} vs {exact}");
        let s2 = AttackSpec::l2(gamma, 10).with_step_size(gamma);
        let got = smooth_sup(&r, &[0.3, 0.1, -0.4], 1, &s2, &mut rng()).unwrap();
        let exact2 = gamma * (0.25f64 + 9.0).sqrt();
        assert!((got - exact2).abs() < 1e-12, "{got} vs {exact2}");
    }

    #[test]
    fn displacement_gradient_matches_finite_differences() {
        let a = [0.3, -1.0, 2.0, 0.5];
        let c = [0.1, 0.2, -0.3, 0.0];
        let (v, g) = displacement_norm_grad(&a, &c, 2).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut p = a;
            p[i] += h;
            let mut m = a;
            m[i] -= h;
            let fd = (displacement_norm_grad(&p, &c, 2).unwrap().0 - displacement_norm_grad(&m, &c, 2).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7);
        }
        assert!(v > 0.0);
        let (z, g0) = displacement_norm_grad(&c, &c, 0).unwrap();
        assert_eq!(z, 0.0);
        let k = 1.0 / 3.0f64.sqrt();
        assert!((g0[0] - 3.0 * k).abs() < 1e-15);
        assert!(g0[1..].iter().all(|v| (v + k).abs() < 1e-15));
    }

    #[test]
    fn probe_uses_exact_traversal_budget() {
        let r = Scorer::init(ScorerSpec::mlp(4, &[6], 3), 2).unwrap();
        let x = [0.1, -0.2, 0.3, 0.4];
        let clean = r.forward_cached(&x).unwrap();
        r.traversals().reset();
        let s = AttackSpec::linf(0.2, 7).with_init(Init::RandomInBall);
        let probe = smooth_sup_probe(&r, &clean, 1, &s, &mut rng()).unwrap();
        assert_eq!(r.traversals().forward(), 7);
        assert_eq!(r.traversals().backward(), 7);
        assert!(contains(&x, &probe.x, &AttackSpec::linf(0.2, 1)));
        assert_eq!(probe.cache.input(), probe.x.as_slice());
        let (v, _) = displacement_norm_grad(probe.cache.scores(), clean.scores(), 1).unwrap();
        assert_eq!(v, probe.value);
    }

    #[test]
    fn determinism_at_center() {
        let r = Scorer::init(ScorerSpec::mlp(3, &[5], 3), 4).unwrap();
        let tau = aggregate_costs(&CostVector::new(vec![0.0, 1.0, 1.0]).unwrap());
        let s = AttackSpec::linf(0.3, 8);
        let a = untargeted_attack(&r, &tau, &[0.1, 0.2, 0.3], &s, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = untargeted_attack(&r, &tau, &[0.1, 0.2, 0.3], &s, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    fn quadratic_bowl(center: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        // Non-concave objective to maximize: distance from a point, squared, with a sine ripple.
        move |x: &[f64]| {
            let v = x.iter().zip(&center).map(|(a, c)| (a - c).powi(2) + (3.0 * a).sin()).sum();
            let g = x.iter().zip(&center).map(|(a, c)| 2.0 * (a - c) + 3.0 * (3.0 * a).cos()).collect();
            Ok((v, g))
        }
    }

    proptest! {
        #[test]
        fn containment_and_monotone_trace(
            x0 in prop::collection::vec(-3.0f64..3.0, 1..6),
            gamma in 0.0f64..1.5,
            steps in 1usize..12,
            two in any::<bool>(),
            random in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let mut s = if two { AttackSpec::l2(gamma, steps) } else { AttackSpec::linf(gamma, steps) };
            s.step_size = (gamma * 0.7).max(1e-3);
            if random { s.init = Init::RandomInBall; }
            let c: Vec<f64> = x0.iter().map(|v| v * 0.5 + 0.1).collect();
            let out = pgd(&mut quadratic_bowl(c), &x0, &s, Sense::Maximize, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(contains(&x0, &out.x, &s));
            prop_assert_eq!(out.trace.len(), steps + 1);
            for w in out.trace.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }

        #[test]
        fn larger_radius_never_weaker_on_linear(
            g in prop::collection::vec(-2.0f64..2.0, 1..6),
            g1 in 0.01f64..1.0,
            extra in 0.0f64..1.0,
        ) {
            let x0 = vec![0.0; g.len()];
            let small = AttackSpec::linf(g1, 1).with_step_size(g1);
            let big = AttackSpec::linf(g1 + extra, 1).with_step_size(g1 + extra);
            let a = pgd(&mut linear(g.clone()), &x0, &small, Sense::Maximize, &mut rng()).unwrap().value;
            let b = pgd(&mut linear(g.clone()), &x0, &big, Sense::Maximize, &mut rng()).unwrap().value;
            prop_assert!(b >= a);
        }
    }
}
