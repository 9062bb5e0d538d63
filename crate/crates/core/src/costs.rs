//! Samples, agents and the per-sample cost algebra.
//!
//! Agent `0` is always the main model; agents `1..=J` are the offline experts.
//! Costs are evaluated once on the clean input and never under perturbation,
//! since attacks only target the rejector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which kind of target a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

/// One data point `z = (x, y, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Option<usize>,
    pub t: Option<f64>,
}

impl Sample {
    pub fn classification(x: Vec<f64>, y: usize) -> Self {
        Self { x, y: Some(y), t: None }
    }

    pub fn regression(x: Vec<f64>, t: f64) -> Self {
        Self { x, y: None, t: Some(t) }
    }

    /// Checks the feature dimension and that the target matching `kind` is present.
    pub fn validate(&self, dim: usize, kind: TaskKind) -> Result<()> {
        if self.x.len() != dim {
            return Err(Error::Schema(format!(
                "sample has {} features, schema declares {dim}",
                self.x.len()
            )));
        }
        match kind {
            TaskKind::Classification if self.y.is_none() => {
                Err(Error::Schema("classification sample without a class label".into()))
            }
            TaskKind::Regression if self.t.is_none() => {
                Err(Error::Schema("regression sample without a target".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Output of one agent on one query.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentPrediction {
    pub class_pred: Option<usize>,
    pub reg_pred: Option<f64>,
}

impl AgentPrediction {
    pub fn class(label: usize) -> Self {
        Self {
            class_pred: Some(label),
            reg_pred: None,
        }
    }

    pub fn value(v: f64) -> Self {
        Self {
            class_pred: None,
            reg_pred: Some(v),
        }
    }
}

/// A frozen agent. `index` is the position of `sample` in its dataset; agents
/// that simulate stochastic experts derive their randomness from it so the
/// prediction stays a deterministic function of the query.
pub trait Agent: Send + Sync {
    fn predict(&self, index: usize, sample: &Sample) -> AgentPrediction;
}

impl<F> Agent for F
where
    F: Fn(usize, &Sample) -> AgentPrediction + Send + Sync,
{
    fn predict(&self, index: usize, sample: &Sample) -> AgentPrediction {
        self(index, sample)
    }
}

/// The model (agent 0) plus `J` experts, with consultation costs `beta`.
pub struct AgentPool {
    agents: Vec<Box<dyn Agent>>,
    beta: Vec<f64>,
}

impl std::fmt::Debug for AgentPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentPool")
            .field("agents", &self.agents.len())
            .field("beta", &self.beta)
            .finish()
    }
}

impl AgentPool {
    /// `agents[0]` is the model. `beta[0]` must be zero and every entry non-negative.
    pub fn new(agents: Vec<Box<dyn Agent>>, beta: Vec<f64>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::Schema("agent pool needs at least the model".into()));
        }
        if agents.len() != beta.len() {
            return Err(Error::LengthMismatch {
                left: agents.len(),
                right: beta.len(),
                context: "agents vs consultation costs",
            });
        }
        if beta[0] != 0.0 {
            return Err(Error::Domain("consultation cost of the model must be 0".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
            return Err(Error::Domain(format!("consultation cost {b} is not a non-negative real")));
        }
        Ok(Self { agents, beta })
    }

    /// `|A| = J + 1`.
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn num_experts(&self) -> usize {
        self.agents.len() - 1
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn predict(&self, agent: usize, index: usize, sample: &Sample) -> Result<AgentPrediction> {
        let a = self.agents.get(agent).ok_or(Error::AgentIndex {
            index: agent,
            len: self.agents.len(),
        })?;
        Ok(a.predict(index, sample))
    }

    pub fn predictions(&self, index: usize, sample: &Sample) -> Vec<AgentPrediction> {
        self.agents.iter().map(|a| a.predict(index, sample)).collect()
    }

    /// Predictions and cost vector for one sample.
    pub fn costs(
        &self,
        index: usize,
        sample: &Sample,
        psi: TaskCost,
    ) -> Result<(Vec<AgentPrediction>, CostVector)> {
        let preds = self.predictions(index, sample);
        let c = cost_vector(&preds, &self.beta, sample, psi)?;
        Ok((preds, c))
    }
}

/// Per-sample task loss `psi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCost {
    /// 0-1 loss on the class prediction.
    ZeroOne,
    /// `|f(x) - t|`, the single-sample root squared error.
    AbsoluteError,
}

impl TaskCost {
    pub fn for_task(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Classification => TaskCost::ZeroOne,
            TaskKind::Regression => TaskCost::AbsoluteError,
        }
    }

    pub fn eval(self, pred: &AgentPrediction, z: &Sample) -> Result<f64> {
        match self {
            TaskCost::ZeroOne => {
                let p = pred
                    .class_pred
                    .ok_or_else(|| Error::Schema("agent returned no class prediction".into()))?;
                let y = z
                    .y
                    .ok_or_else(|| Error::Schema("sample has no class label".into()))?;
                Ok(if p == y { 0.0 } else { 1.0 })
            }
            TaskCost::AbsoluteError => {
                let p = pred
                    .reg_pred
                    .ok_or_else(|| Error::Schema("agent returned no regression prediction".into()))?;
                let t = z
                    .t
                    .ok_or_else(|| Error::Schema("sample has no regression target".into()))?;
                Ok((p - t).abs())
            }
        }
    }
}

/// `c[j]`: cost of routing the query to agent `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostVector(Vec<f64>);

impl CostVector {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::Schema("cost vector must cover at least the model".into()));
        }
        if let Some(v) = c.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("cost {v} is not a non-negative real")));
        }
        Ok(Self(c))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of experts `J`.
    pub fn num_experts(&self) -> usize {
        self.0.len() - 1
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn scaled(&self, a: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * a).collect())
    }
}

/// `tau[j] = sum_{i != j} c[i]`, the weight of agent `j` in the surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AggregatedCosts(Vec<f64>);

impl AggregatedCosts {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Builds directly from weights, e.g. when a caller already holds `tau`.
    pub fn from_weights(tau: Vec<f64>) -> Result<Self> {
        if let Some(v) = tau.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("aggregated cost {v} is not a non-negative real")));
        }
        Ok(Self(tau))
    }
}

impl std::ops::Index<usize> for CostVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::Index<usize> for AggregatedCosts {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `c[0] = psi(model, z)`, `c[j] = psi(m_j, z) + beta[j]`.
pub fn cost_vector(
    predictions: &[AgentPrediction],
    beta: &[f64],
    z: &Sample,
    psi: TaskCost,
) -> Result<CostVector> {
    if predictions.len() != beta.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: beta.len(),
            context: "predictions vs consultation costs",
        });
    }
    let c = predictions
        .iter()
        .zip(beta)
        .map(|(p, b)| psi.eval(p, z).map(|v| v + b))
        .collect::<Result<Vec<_>>>()?;
    CostVector::new(c)
}

pub fn aggregate_costs(c: &CostVector) -> AggregatedCosts {
    // Explicit complement sums rather than total - c[j]: exact for any input.
    let tau = (0..c.len())
        .map(|j| {
            c.0.iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .map(|(_, v)| v)
                .sum()
        })
        .collect();
    AggregatedCosts(tau)
}

/// `l_def = c[chosen]`.
pub fn true_deferral_loss(c: &CostVector, chosen: usize) -> Result<f64> {
    c.0.get(chosen).copied().ok_or(Error::AgentIndex {
        index: chosen,
        len: c.len(),
    })
}

/// The same loss in complement form:
/// `sum_i tau[i] 1{i != chosen} + (1 - J) sum_i c[i]`.
pub fn deferral_loss_complement_form(c: &CostVector, chosen: usize) -> Result<f64> {
    if chosen >= c.len() {
        return Err(Error::AgentIndex {
            index: chosen,
            len: c.len(),
        });
    }
    let tau = aggregate_costs(c);
    let j = c.num_experts() as f64;
    let miss: f64 = tau
        .0
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != chosen)
        .map(|(_, v)| v)
        .sum();
    Ok(miss + (1.0 - j) * c.total())
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(v: &[f64]) -> CostVector {
        CostVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn classification_costs_add_consultation_fee() {
        let z = Sample::classification(vec![0.0], 3);
        let preds = [
            AgentPrediction::class(1),
            AgentPrediction::class(3),
            AgentPrediction::class(0),
        ];
        let c = cost_vector(&preds, &[0.0, 0.05, 0.1], &z, TaskCost::ZeroOne).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 0.05, 1.1]);
    }

    #[test]
    fn regression_cost_is_absolute_error() {
        let z = Sample::regression(vec![0.0], 1.5);
        let preds = [AgentPrediction::value(1.0), AgentPrediction::value(2.0)];
        let c = cost_vector(&preds, &[0.0, 0.0], &z, TaskCost::AbsoluteError).unwrap();
        assert_eq!(c.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn correct_expert_pays_only_its_fee() {
        let z = Sample::classification(vec![0.0], 2);
        let preds = [AgentPrediction::class(0), AgentPrediction::class(2)];
        let c = cost_vector(&preds, &[0.0, 0.3], &z, TaskCost::ZeroOne).unwrap();
        assert_eq!(c[1], 0.3);
    }

    #[test]
    fn missing_prediction_field_is_a_schema_error() {
        let z = Sample::classification(vec![0.0], 2);
        let preds = [AgentPrediction::value(1.0)];
        let err = cost_vector(&preds, &[0.0], &z, TaskCost::ZeroOne).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        let z = Sample::regression(vec![0.0], 1.0);
        let err = cost_vector(&[AgentPrediction::class(1)], &[0.0], &z, TaskCost::AbsoluteError)
            .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn aggregate_examples() {
        let tau = aggregate_costs(&cv(&[0.2, 0.5, 0.1]));
        let expect = [0.6, 0.3, 0.7];
        for (a, b) in tau.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(aggregate_costs(&cv(&[0.0, 0.0, 0.0])).as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(aggregate_costs(&cv(&[1.0])).as_slice(), &[0.0]);
    }

    #[test]
    fn true_loss_examples() {
        let c = cv(&[0.2, 0.5, 0.1]);
        assert_eq!(true_deferral_loss(&c, 1).unwrap(), 0.5);
        assert_eq!(true_deferral_loss(&c, 2).unwrap(), 0.1);
        assert!((deferral_loss_complement_form(&c, 2).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(true_deferral_loss(&cv(&[1.0, 1.0]), 0).unwrap(), 1.0);
        assert!(matches!(
            true_deferral_loss(&c, 3),
            Err(Error::AgentIndex { index: 3, len: 3 })
        ));
    }

    #[test]
    fn pool_validates_consultation_costs() {
        let model = |_: usize, _: &Sample| AgentPrediction::class(0);
        let ok = AgentPool::new(vec![Box::new(model), Box::new(model)], vec![0.0, 0.2]);
        assert_eq!(ok.unwrap().num_experts(), 1);
        let bad = AgentPool::new(vec![Box::new(model)], vec![0.1]);
        assert!(matches!(bad, Err(Error::Domain(_))));
        let neg = AgentPool::new(vec![Box::new(model), Box::new(model)], vec![0.0, -0.1]);
        assert!(matches!(neg, Err(Error::Domain(_))));
    }

    #[test]
    fn negative_costs_rejected() {
        assert!(CostVector::new(vec![0.1, -1.0]).is_err());
        assert!(CostVector::new(vec![]).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmin(&[0.3, 0.1, 0.1]), 1);
        assert_eq!(argmax(&[2.0, 5.0, 5.0]), 1);
    }

    #[test]
    fn sample_validation() {
        let s = Sample::classification(vec![1.0, 2.0], 0);
        assert!(s.validate(2, TaskKind::Classification).is_ok());
        assert!(s.validate(3, TaskKind::Classification).is_err());
        assert!(s.validate(2, TaskKind::Regression).is_err());
    }
}
