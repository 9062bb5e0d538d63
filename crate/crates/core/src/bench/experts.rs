//! Agent construction: simulated category experts and scorer-backed models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{Agent, AgentPrediction, Sample};
use crate::error::{Error, Result};
use crate::scorer::{Scorer, ScorerSpec};
use crate::trainer::{fit_supervised, SupervisedConfig, SupervisedLoss};

/// Expert that is right with probability `p` on its assigned categories and
/// answers uniformly at random elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticExpertSpec {
    pub assigned: Vec<usize>,
    pub p: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticExpert {
    assigned: Vec<bool>,
    p: f64,
    seed: u64,
    classes: usize,
    id: u64,
}

impl SyntheticExpert {
    pub fn new(spec: &SyntheticExpertSpec, classes: usize, id: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&spec.p) {
            return Err(Error::Domain(format!("expert accuracy {} outside [0, 1]", spec.p)));
        }
        if classes == 0 {
            return Err(Error::Domain("label set is empty".into()));
        }
        let mut assigned = vec![false; classes];
        for &c in &spec.assigned {
            *assigned
                .get_mut(c)
                .ok_or_else(|| Error::Domain(format!("assigned category {c} outside 0..{classes}")))? = true;
        }
        Ok(Self {
            assigned,
            p: spec.p,
            seed: spec.seed,
            classes,
            id: id as u64,
        })
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(index as u64).to_le_bytes());
        key[16..24].copy_from_slice(&self.id.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

impl Agent for SyntheticExpert {
    fn predict(&self, index: usize, sample: &Sample) -> AgentPrediction {
        let mut rng = self.rng(index);
        let Some(y) = sample.y else {
            return AgentPrediction::default();
        };
        let hit = rng.gen::<f64>() < self.p;
        if y < self.classes && self.assigned[y] && hit {
            AgentPrediction::class(y)
        } else {
            AgentPrediction::class(rng.gen_range(0..self.classes))
        }
    }
}

/// `J` simulated experts with identifiers `1..=J`.
pub fn make_synthetic_experts(specs: &[SyntheticExpertSpec], classes: usize) -> Result<Vec<Box<dyn Agent>>> {
    specs
        .iter()
        .enumerate()
        .map(|(j, s)| Ok(Box::new(SyntheticExpert::new(s, classes, j + 1)?) as Box<dyn Agent>))
        .collect()
}

/// Classifier agent: argmax of a scorer applied to selected features.
#[derive(Debug, Clone)]
pub struct ScorerClassifier {
    pub scorer: Scorer,
    /// Feature positions fed to the scorer; all features when `None`.
    pub features: Option<Vec<usize>>,
}

/// Regressor agent: first output of a scorer.
#[derive(Debug, Clone)]
pub struct ScorerRegressor {
    pub scorer: Scorer,
}

fn select(x: &[f64], features: &Option<Vec<usize>>) -> Vec<f64> {
    match features {
        Some(f) => f.iter().map(|&i| x[i]).collect(),
        None => x.to_vec(),
    }
}

impl Agent for ScorerClassifier {
    fn predict(&self, _index: usize, sample: &Sample) -> AgentPrediction {
        match self.scorer.forward(&select(&sample.x, &self.features)) {
            Ok(s) => AgentPrediction::class(s.argmax()),
            Err(_) => AgentPrediction::default(),
        }
    }
}

impl Agent for ScorerRegressor {
    fn predict(&self, _index: usize, sample: &Sample) -> AgentPrediction {
        match self.scorer.forward(&sample.x) {
            Ok(s) => AgentPrediction::value(s.0[0]),
            Err(_) => AgentPrediction::default(),
        }
    }
}

/// Trains one regressor per latitude band on that band's rows.
///
/// `latitude` is the (standardized) latitude of every sample; `thresholds`
/// are band edges on the same scale, in increasing order.
pub fn make_regional_experts(
    samples: &[Sample],
    latitude: &[f64],
    thresholds: &[f64],
    spec: &ScorerSpec,
    cfg: &SupervisedConfig,
) -> Result<Vec<Scorer>> {
    if samples.len() != latitude.len() {
        return Err(Error::LengthMismatch {
            left: samples.len(),
            right: latitude.len(),
            context: "samples vs latitudes",
        });
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("latitude thresholds must increase".into()));
    }
    let region = |lat: f64| thresholds.iter().filter(|t| lat >= **t).count();
    (0..=thresholds.len())
        .map(|band| {
            let rows: Vec<Sample> = samples
                .iter()
                .zip(latitude)
                .filter(|(_, l)| region(**l) == band)
                .map(|(s, _)| s.clone())
                .collect();
            if rows.is_empty() {
                return Err(Error::Domain(format!("latitude region {band} has no training rows")));
            }
            let c = SupervisedConfig {
                seed: cfg.seed.wrapping_add(band as u64 + 1),
                ..cfg.clone()
            };
            fit_supervised(&rows, spec, SupervisedLoss::Squared, &c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(n: usize, classes: usize) -> Vec<Sample> {
        (0..n).map(|i| Sample::classification(vec![0.0], i % classes)).collect()
    }

    fn accuracy(e: &SyntheticExpert, samples: &[Sample]) -> f64 {
        let hits = samples
            .iter()
            .enumerate()
            .filter(|(i, s)| e.predict(*i, s).class_pred == s.y)
            .count();
        hits as f64 / samples.len() as f64
    }

    #[test]
    fn perfect_expert_on_everything() {
        let e = SyntheticExpert::new(&SyntheticExpertSpec { assigned: (0..10).collect(), p: 1.0, seed: 1 }, 10, 1).unwrap();
        assert_eq!(accuracy(&e, &labelled(500, 10)), 1.0);
    }

    #[test]
    fn assigned_accuracy_near_p() {
        let assigned: Vec<usize> = (0..50).collect();
        let e = SyntheticExpert::new(&SyntheticExpertSpec { assigned, p: 0.94, seed: 3 }, 100, 1).unwrap();
        let s: Vec<Sample> = (0..10_000).map(|i| Sample::classification(vec![], i % 50)).collect();
        let a = accuracy(&e, &s);
        // Uniform guesses can also land on the truth: 0.94 + 0.06 / 100.
        assert!((a - 0.9406).abs() < 0.02, "{a}");
        let u: Vec<Sample> = (0..10_000).map(|i| Sample::classification(vec![], 50 + i % 50)).collect();
        assert!((accuracy(&e, &u) - 0.01).abs() < 0.01);
    }

    #[test]
    fn predictions_are_deterministic_per_index() {
        let e = SyntheticExpert::new(&SyntheticExpertSpec { assigned: vec![1], p: 0.5, seed: 9 }, 4, 2).unwrap();
        let s = Sample::classification(vec![], 1);
        assert_eq!(e.predict(17, &s), e.predict(17, &s));
    }

    #[test]
    fn empty_assignment_allowed_bad_category_rejected() {
        assert!(SyntheticExpert::new(&SyntheticExpertSpec { assigned: vec![], p: 0.9, seed: 0 }, 5, 1).is_ok());
        assert!(SyntheticExpert::new(&SyntheticExpertSpec { assigned: vec![7], p: 0.9, seed: 0 }, 5, 1).is_err());
        assert!(SyntheticExpert::new(&SyntheticExpertSpec { assigned: vec![], p: 1.5, seed: 0 }, 5, 1).is_err());
    }

    #[test]
    fn regional_experts_specialize() {
        // Target depends on the band: +x in the south, -x in the north.
        let mut samples = Vec::new();
        let mut lat = Vec::new();
        for i in 0..400 {
            let x = (i % 40) as f64 / 20.0 - 1.0;
            let l = if i < 200 { -1.0 } else { 1.0 };
            let t = if l < 0.0 { x } else { -x };
            samples.push(Sample::regression(vec![x, l], t));
            lat.push(l);
        }
        let cfg = SupervisedConfig { epochs: 60, batch_size: 32, learning_rate: 0.02, weight_decay: 0.0, seed: 1 };
        let experts = make_regional_experts(&samples, &lat, &[0.0], &ScorerSpec::mlp(2, &[8], 1), &cfg).unwrap();
        let rmse = |r: &Scorer, rows: &[Sample]| {
            (rows.iter().map(|s| (r.forward(&s.x).unwrap().0[0] - s.t.unwrap()).powi(2)).sum::<f64>() / rows.len() as f64).sqrt()
        };
        let south = &samples[..200];
        assert!(rmse(&experts[0], south) < rmse(&experts[1], south));
        assert!(make_regional_experts(&samples, &lat, &[5.0], &ScorerSpec::linear(2, 1), &cfg).is_err());
    }
}
