//! Rejector training (clean baseline and SARD), evaluation under attack, and
//! supervised fitting of scorer-backed agents.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{smooth_sup_probe, targeted_attack, untargeted_attack, AttackSpec, Init};
use crate::costs::{aggregate_costs, AgentPool, AgentPrediction, AggregatedCosts, CostVector, Sample, TaskCost, TaskKind};
use crate::error::{check_len, Error, Result};
use crate::losses::{comp_sum_deferral_grad, comp_sum_surrogate_grad, PsiParams};
use crate::scorer::{Scorer, ScorerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

impl Schedule {
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => 0.5 * base * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum {
        mu: f64,
    },
    AdaptiveMoment {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::AdaptiveMoment {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// First-order optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::SgdMomentum { mu } => {
                for ((p, g), m) in params.iter_mut().zip(grad).zip(&mut self.m) {
                    *m = mu * *m + g;
                    *p -= lr * *m;
                }
            }
            OptimizerKind::AdaptiveMoment { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Weight of the squared parameter norm added to the objective.
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub psi: PsiParams,
    pub attack: AttackSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_schedule() -> Schedule {
    Schedule::Cosine
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if let OptimizerKind::SgdMomentum { mu } = self.optimizer {
            if !(0.0..1.0).contains(&mu) {
                return Err(Error::Config(format!("momentum must lie in [0, 1), got {mu}")));
            }
        }
        self.psi.validate()?;
        self.attack.validate()
    }
}

/// Cached per-sample inputs, agent predictions and costs, all computed on the
/// clean inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DeferralData {
    pub kind: TaskKind,
    pub samples: Vec<Sample>,
    pub predictions: Vec<Vec<AgentPrediction>>,
    pub costs: Vec<CostVector>,
    pub tau: Vec<AggregatedCosts>,
}

impl DeferralData {
    /// `indices[k]` is the dataset position passed to agents for `samples[k]`
    /// (defaults to `k`), so subsets keep their agents' per-sample randomness.
    pub fn build(samples: &[Sample], pool: &AgentPool, kind: TaskKind, indices: Option<&[usize]>) -> Result<Self> {
        let psi = TaskCost::for_task(kind);
        let mut predictions = Vec::with_capacity(samples.len());
        let mut costs = Vec::with_capacity(samples.len());
        let mut tau = Vec::with_capacity(samples.len());
        for (k, s) in samples.iter().enumerate() {
            let index = indices.map_or(k, |ix| ix[k]);
            let (p, c) = pool.costs(index, s, psi)?;
            tau.push(aggregate_costs(&c));
            predictions.push(p);
            costs.push(c);
        }
        Ok(Self {
            kind,
            samples: samples.to_vec(),
            predictions,
            costs,
            tau,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_agents(&self) -> usize {
        self.costs.first().map_or(0, CostVector::len)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            kind: self.kind,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            predictions: idx.iter().map(|&i| self.predictions[i].clone()).collect(),
            costs: idx.iter().map(|&i| self.costs[i].clone()).collect(),
            tau: idx.iter().map(|&i| self.tau[i].clone()).collect(),
        }
    }

    fn check(&self, spec: &ScorerSpec) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        check_len(self.num_agents(), spec.output_dim, "rejector outputs vs agents")?;
        for s in &self.samples {
            check_len(spec.input_dim, s.x.len(), "rejector inputs vs features")?;
        }
        Ok(())
    }
}

/// `fraction` of `0..n` (rounded, at least one element when `n > 1`) drawn
/// by `seed`; returns `(train, validation)` with both halves sorted.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64) * fraction).round() as usize;
    let k = if n > 1 { k.clamp(1, n - 1) } else { 0 };
    let mut val = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Exact traversal tallies of a training run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub clean_forward: u64,
    pub pgd_forward: u64,
    pub pgd_backward: u64,
    pub update_backward: u64,
    /// Checkpoint-selection passes, kept out of the training totals.
    pub validation_forward: u64,
    /// `(forward, backward)` training traversals of each epoch.
    pub per_epoch: Vec<(u64, u64)>,
}

impl CostLedger {
    pub fn forward_count(&self) -> u64 {
        self.clean_forward + self.pgd_forward
    }

    pub fn backward_count(&self) -> u64 {
        self.pgd_backward + self.update_backward
    }

    /// `n (1 + |A| T_a)`.
    pub fn expected_per_epoch(n: usize, agents: usize, steps: usize) -> u64 {
        (n * (1 + agents * steps)) as u64
    }

    fn absorb(&mut self, s: &SampleTally) {
        self.clean_forward += s.clean_forward;
        self.pgd_forward += s.pgd_forward;
        self.pgd_backward += s.pgd_backward;
        self.update_backward += s.update_backward;
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct SampleTally {
    clean_forward: u64,
    pgd_forward: u64,
    pgd_backward: u64,
    update_backward: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_risk: f64,
    pub lr: f64,
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation risk.
    pub scorer: Scorer,
    pub best_epoch: usize,
    pub best_val_risk: f64,
    pub history: Vec<HistoryRow>,
    pub ledger: CostLedger,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Objective {
    Baseline,
    Sard,
}

/// Minimizes `mean_k sum_j tau_j Phi_u(r, x_k, j) + eta ||theta||^2`.
pub fn train_baseline(train: &DeferralData, validation: &DeferralData, spec: &ScorerSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(train, validation, spec, cfg, Objective::Baseline)
}

/// Minimizes `mean_k sum_j tau_j [Phi_u(r / rho, x_k, j) + nu sup_j] + eta ||theta||^2`
/// with one PGD inner maximization per sample and agent.
pub fn train_sard(train: &DeferralData, validation: &DeferralData, spec: &ScorerSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(train, validation, spec, cfg, Objective::Sard)
}

fn attack_rng(seed: u64, epoch: usize, sample: usize, agent: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(sample as u64).to_le_bytes());
    key[24..].copy_from_slice(&((agent as u64) | (1 << 63)).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[24..].copy_from_slice(&u64::MAX.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

struct SampleGrad {
    loss: f64,
    grad: Vec<f64>,
    tally: SampleTally,
}

fn sample_grad(r: &Scorer, data: &DeferralData, k: usize, cfg: &TrainConfig, objective: Objective, epoch: usize) -> Result<SampleGrad> {
    let local = r.detached();
    let counts = |s: &Scorer| (s.traversals().forward(), s.traversals().backward());
    let tau = &data.tau[k];
    let mut tally = SampleTally::default();
    let cache = local.forward_cached(&data.samples[k].x)?;
    tally.clean_forward = counts(&local).0;
    let mut grad = vec![0.0; local.params().len()];
    let loss = match objective {
        Objective::Baseline => {
            let (v, g) = comp_sum_deferral_grad(tau, cache.scores(), cfg.psi.u)?;
            local.backward_into(&cache, &g, &mut grad)?;
            v
        }
        Objective::Sard => {
            let rho = cfg.psi.rho;
            let scaled: Vec<f64> = cache.scores().iter().map(|v| v / rho).collect();
            let (mut loss, g) = comp_sum_deferral_grad(tau, &scaled, cfg.psi.u)?;
            let mut upstream: Vec<f64> = g.iter().map(|v| v / rho).collect();
            let mut probes = Vec::new();
            for j in 0..tau.len() {
                let mut rng = attack_rng(cfg.seed, epoch, k, j);
                let probe = smooth_sup_probe(&local, &cache, j, &cfg.attack, &mut rng)?;
                let w = cfg.psi.nu * tau[j];
                loss += w * probe.value;
                if w != 0.0 {
                    let up: Vec<f64> = probe.grad_scores.iter().map(|v| w * v).collect();
                    for (a, b) in upstream.iter_mut().zip(&up) {
                        *a -= b;
                    }
                    probes.push((probe.cache, up));
                }
            }
            let (f, b) = counts(&local);
            tally.pgd_forward = f - tally.clean_forward;
            tally.pgd_backward = b;
            let mut parts: Vec<(&crate::scorer::ForwardCache, &[f64])> = vec![(&cache, upstream.as_slice())];
            parts.extend(probes.iter().map(|(c, u)| (c, u.as_slice())));
            local.backward_combined(&parts, &mut grad)?;
            loss
        }
    };
    tally.update_backward = counts(&local).1 - tally.pgd_backward;
    Ok(SampleGrad { loss, grad, tally })
}

/// Mean realized cost `c[argmax r(x)]` on clean inputs.
pub fn routed_risk(r: &Scorer, data: &DeferralData) -> Result<f64> {
    let costs: Vec<f64> = (0..data.len())
        .into_par_iter()
        .map(|k| Ok(data.costs[k][r.forward(&data.samples[k].x)?.argmax()]))
        .collect::<Result<_>>()?;
    Ok(costs.iter().sum::<f64>() / data.len().max(1) as f64)
}

fn run(train: &DeferralData, validation: &DeferralData, spec: &ScorerSpec, cfg: &TrainConfig, objective: Objective) -> Result<TrainOutcome> {
    cfg.validate()?;
    train.check(spec)?;
    if !validation.is_empty() {
        validation.check(spec)?;
    }
    let mut r = Scorer::init(spec.clone(), cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, r.params().len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle = shuffle_rng(cfg.seed);
    let mut ledger = CostLedger::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let eval_set = if validation.is_empty() { train } else { validation };
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        order.shuffle(&mut shuffle);
        let before = (ledger.forward_count(), ledger.backward_count());
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts: Vec<SampleGrad> = batch
                .par_iter()
                .map(|&k| sample_grad(&r, train, k, cfg, objective, epoch))
                .collect::<Result<_>>()
                .map_err(|e| e.in_stage(format!("epoch {epoch} batch {b}")))?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; r.params().len()];
            let mut batch_loss = 0.0;
            for p in &parts {
                batch_loss += p.loss;
                for (g, v) in grad.iter_mut().zip(&p.grad) {
                    *g += v;
                }
                ledger.absorb(&p.tally);
                let t = p.tally;
                r.traversals().add(t.clean_forward + t.pgd_forward, t.pgd_backward + t.update_backward);
            }
            let eta = cfg.weight_decay;
            let reg = eta * r.squared_norm();
            for (g, p) in grad.iter_mut().zip(r.params()) {
                *g = *g * scale + 2.0 * eta * p;
            }
            let objective_value = batch_loss * scale + reg;
            if !objective_value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch} batch {b}: objective {objective_value}, parameter norm {}",
                    r.squared_norm().sqrt()
                )));
            }
            loss_sum += batch_loss + reg * batch.len() as f64;
            opt.step(r.params_mut(), &grad, lr);
        }
        ledger
            .per_epoch
            .push((ledger.forward_count() - before.0, ledger.backward_count() - before.1));
        let f0 = r.traversals().forward();
        let val_risk = routed_risk(&r, eval_set)?;
        ledger.validation_forward += r.traversals().forward() - f0;
        history.push(HistoryRow {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_risk,
            lr,
        });
        if best.as_ref().is_none_or(|(v, _, _)| val_risk < *v) {
            best = Some((val_risk, epoch, r.params().to_vec()));
        }
    }
    let (best_val_risk, best_epoch, params) = best.expect("at least one epoch");
    let scorer = Scorer::new(spec.clone(), params)?;
    scorer.traversals().add(r.traversals().forward(), r.traversals().backward());
    Ok(TrainOutcome {
        scorer,
        best_epoch,
        best_val_risk,
        history,
        ledger,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "target", rename_all = "snake_case")]
pub enum AttackMode {
    Clean,
    Untargeted,
    Targeted(usize),
}

impl AttackMode {
    pub fn label(self) -> String {
        match self {
            AttackMode::Clean => "clean".into(),
            AttackMode::Untargeted => "untargeted".into(),
            AttackMode::Targeted(j) => format!("targeted_{j}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(AttackMode::Clean),
            "untargeted" => Ok(AttackMode::Untargeted),
            _ => s
                .strip_prefix("targeted_")
                .or_else(|| s.strip_prefix("targeted:"))
                .and_then(|j| j.parse().ok())
                .map(AttackMode::Targeted)
                .ok_or_else(|| Error::Config(format!("unknown attack mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: String,
    /// Accuracy for classification, RMSE for regression.
    pub metric: f64,
    pub metric_name: String,
    /// Fraction of queries routed to each agent.
    pub deferral: Vec<f64>,
    pub mean_cost: f64,
    pub n: usize,
}

/// Routes every (optionally perturbed) query with `argmax r` and scores the
/// chosen agent's clean-input prediction.
pub fn evaluate(r: &Scorer, data: &DeferralData, mode: AttackMode, spec: &AttackSpec, u: f64, seed: u64) -> Result<Metrics> {
    let a = data.num_agents();
    check_len(a, r.spec().output_dim, "rejector outputs vs agents")?;
    if let AttackMode::Targeted(j) = mode {
        if j >= a {
            return Err(Error::AgentIndex { index: j, len: a });
        }
    }
    spec.validate()?;
    let routed: Vec<usize> = (0..data.len())
        .into_par_iter()
        .map(|k| {
            let x = &data.samples[k].x;
            let mut rng = attack_rng(seed, usize::MAX, k, a);
            let adv = match mode {
                AttackMode::Clean => x.clone(),
                AttackMode::Untargeted => untargeted_attack(r, &data.tau[k], x, spec, u, &mut rng)?,
                AttackMode::Targeted(j) => targeted_attack(r, &data.tau[k], x, j, spec, u, &mut rng)?,
            };
            Ok(r.forward(&adv)?.argmax())
        })
        .collect::<Result<_>>()?;
    let n = data.len().max(1) as f64;
    let mut deferral = vec![0.0; a];
    let mut cost = 0.0;
    let mut metric_acc = 0.0;
    for (k, &j) in routed.iter().enumerate() {
        deferral[j] += 1.0 / n;
        cost += data.costs[k][j];
        let pred = &data.predictions[k][j];
        let z = &data.samples[k];
        metric_acc += match data.kind {
            TaskKind::Classification => f64::from(u8::from(pred.class_pred.is_some() && pred.class_pred == z.y)),
            TaskKind::Regression => {
                let d = pred.reg_pred.unwrap_or(f64::NAN) - z.t.unwrap_or(f64::NAN);
                d * d
            }
        };
    }
    let (metric, metric_name) = match data.kind {
        TaskKind::Classification => (metric_acc / n, "accuracy"),
        TaskKind::Regression => ((metric_acc / n).sqrt(), "rmse"),
    };
    Ok(Metrics {
        mode: mode.label(),
        metric,
        metric_name: metric_name.into(),
        deferral,
        mean_cost: cost / n,
        n: data.len(),
    })
}

/// Supervised targets for fitting an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupervisedLoss {
    /// Softmax cross-entropy on class labels.
    CrossEntropy,
    /// Squared error on a scalar target (one output).
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Fits a scorer to `(x, target)` pairs. Class targets go through the
/// comp-sum loss at `u = 1` (cross-entropy).
pub fn fit_supervised(samples: &[Sample], spec: &ScorerSpec, loss: SupervisedLoss, cfg: &SupervisedConfig) -> Result<Scorer> {
    if samples.is_empty() {
        return Err(Error::Config("no samples to fit".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("invalid supervised training configuration".into()));
    }
    if loss == SupervisedLoss::Squared {
        check_len(1, spec.output_dim, "regressor outputs")?;
    }
    let mut r = Scorer::init(spec.clone(), cfg.seed)?;
    let mut opt = Optimizer::new(OptimizerKind::default(), r.params().len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = shuffle_rng(cfg.seed ^ 0x5eed);
    for epoch in 0..cfg.epochs {
        let lr = Schedule::Cosine.rate(cfg.learning_rate, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let grads: Vec<Vec<f64>> = batch
                .par_iter()
                .map(|&k| {
                    let z = &samples[k];
                    let cache = r.forward_cached(&z.x)?;
                    let up = match loss {
                        SupervisedLoss::CrossEntropy => {
                            let y = z.y.ok_or_else(|| Error::Schema("class label missing".into()))?;
                            comp_sum_surrogate_grad(cache.scores(), y, 1.0)?.1
                        }
                        SupervisedLoss::Squared => {
                            let t = z.t.ok_or_else(|| Error::Schema("regression target missing".into()))?;
                            vec![2.0 * (cache.scores()[0] - t)]
                        }
                    };
                    let mut g = vec![0.0; r.params().len()];
                    r.backward_into(&cache, &up, &mut g)?;
                    Ok(g)
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; r.params().len()];
            for g in &grads {
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            for (g, p) in grad.iter_mut().zip(r.params()) {
                *g = *g * scale + 2.0 * cfg.weight_decay * p;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("supervised fit diverged at epoch {epoch}")));
            }
            opt.step(r.params_mut(), &grad, lr);
        }
    }
    r.traversals().reset();
    Ok(r)
}

/// Default attack used inside SARD: random start, since the displacement
/// norm is flat at the center.
pub fn sard_attack(gamma: f64, steps: usize) -> AttackSpec {
    AttackSpec::linf(gamma, steps).with_init(Init::RandomInBall)
}
