//! Seeded synthetic data with a planted feature whose distribution depends on
//! the protected group. Stands in for benchmark files that are not shipped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Instance};
use crate::hypothesis::logistic;
use crate::{Error, Result};

/// Features are `[x1, x2, x3]`: `x1 ~ N(0,1)`, `x2 ~ N(shift*(2a-1), 1)`
/// and pure noise `x3`. Labels follow a logistic model in `x1` and `x2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub n: usize,
    pub seed: u64,
    /// Probability that an instance belongs to group 1.
    pub group1_fraction: f64,
    pub shift: f64,
    pub coef_signal: f64,
    pub coef_planted: f64,
    pub intercept: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            seed: 0,
            group1_fraction: 0.5,
            shift: 1.0,
            coef_signal: 1.5,
            coef_planted: 1.0,
            intercept: 0.0,
        }
    }
}

impl PlantedConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            ..Self::default()
        }
    }
}

/// Draws a dataset with groups named `g0` and `g1`. Fails if a draw leaves
/// a group empty.
pub fn planted(cfg: &PlantedConfig) -> Result<Dataset> {
    if cfg.n == 0 {
        return Err(Error::EmptyDataset);
    }
    let group_dist = Bernoulli::new(cfg.group1_fraction)
        .map_err(|e| Error::Config(format!("group1_fraction: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut instances = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let a = usize::from(group_dist.sample(&mut rng));
        let x1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let x3: f64 = StandardNormal.sample(&mut rng);
        let x2 = z2 + cfg.shift * (2.0 * a as f64 - 1.0);
        let p = logistic(cfg.coef_signal * x1 + cfg.coef_planted * x2 + cfg.intercept);
        let y = u8::from(rng.gen::<f64>() < p);
        instances.push(Instance {
            features: vec![x1, x2, x3],
            group: a,
            label: y,
        });
    }
    Dataset::with_group_names(instances, vec!["g0".into(), "g1".into()])
}
