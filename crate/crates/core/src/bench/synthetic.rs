//! Generated desk-scale datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::costs::Sample;
use crate::error::{Error, Result};

/// Gaussian class clusters. The first `robust_dims` coordinates carry widely
/// spread class means; the rest carry small `±nuisance_scale` offsets that an
/// `l_inf` perturbation of moderate size can flip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianClusters {
    pub classes: usize,
    pub dim: usize,
    pub robust_dims: usize,
    pub robust_scale: f64,
    pub nuisance_scale: f64,
    #[serde(default = "unit")]
    pub noise: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for GaussianClusters {
    fn default() -> Self {
        Self {
            classes: 20,
            dim: 32,
            robust_dims: 4,
            robust_scale: 4.0,
            nuisance_scale: 0.4,
            noise: 1.0,
        }
    }
}

impl GaussianClusters {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim == 0 || self.robust_dims > self.dim {
            return Err(Error::Config(format!(
                "cluster task needs >= 2 classes and robust_dims <= dim, got {} / {} / {}",
                self.classes, self.robust_dims, self.dim
            )));
        }
        if !(self.noise >= 0.0 && self.robust_scale >= 0.0 && self.nuisance_scale >= 0.0) {
            return Err(Error::Config("cluster scales must be non-negative".into()));
        }
        Ok(())
    }

    /// Class means, one row per class.
    pub fn means(&self, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|_| {
                (0..self.dim)
                    .map(|i| {
                        if i < self.robust_dims {
                            self.robust_scale * Distribution::<f64>::sample(&StandardNormal, rng)
                        } else if rng.gen::<bool>() {
                            self.nuisance_scale
                        } else {
                            -self.nuisance_scale
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// `n` labelled draws with uniform class frequencies.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<Sample>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = self.means(&mut rng);
        Ok((0..n)
            .map(|_| {
                let y = rng.gen_range(0..self.classes);
                let x = mu[y]
                    .iter()
                    .map(|m| m + self.noise * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect::<Vec<f64>>();
                Sample::classification(x, y)
            })
            .collect())
    }
}

/// Regression data whose response changes with a latitude-like coordinate,
/// so that region-specific experts beat each other on their own band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionalRegression {
    pub dim: usize,
    /// Position of the latitude-like feature.
    pub latitude: usize,
    /// Band edges on the latitude coordinate.
    pub thresholds: Vec<f64>,
    pub noise: f64,
}

impl Default for RegionalRegression {
    fn default() -> Self {
        Self {
            dim: 8,
            latitude: 6,
            thresholds: vec![-0.4, 0.6],
            noise: 0.1,
        }
    }
}

impl RegionalRegression {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.latitude >= self.dim {
            return Err(Error::Config("latitude feature outside the feature range".into()));
        }
        if self.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("band thresholds must increase".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn band(&self, lat: f64) -> usize {
        self.thresholds.iter().filter(|t| lat >= **t).count()
    }

    /// Every band gets its own random linear response plus a shared
    /// nonlinearity in the first feature.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<Sample>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bands = self.thresholds.len() + 1;
        let w: Vec<Vec<f64>> = (0..bands)
            .map(|_| (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let offset: Vec<f64> = (0..bands).map(|b| 1.5 * b as f64).collect();
        Ok((0..n)
            .map(|_| {
                let x: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let b = self.band(x[self.latitude]);
                let lin: f64 = w[b]
                    .iter()
                    .zip(&x)
                    .enumerate()
                    .filter(|(i, _)| *i != self.latitude)
                    .map(|(_, (a, v))| a * v)
                    .sum();
                let noise: f64 = StandardNormal.sample(&mut rng);
                let t = 0.5 * lin + offset[b] + 0.3 * x[0].abs() + self.noise * noise;
                Sample::regression(x, t)
            })
            .collect())
    }
}
