//! Weighted risk and fairness gaps under arbitrary instance weights.
//!
//! Gap functions accept any nonnegative weight slice, so the unnormalized
//! output of bucket discretization can be evaluated directly. Rates are
//! ratios within a group, which makes them scale invariant.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::hypothesis::{Classifier, Ensemble};
use crate::{Error, Result};

/// A point on the probability simplex over instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidWeights(format!(
                "weight {i} is {} (must be finite and nonnegative)",
                weights[i]
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Notion {
    /// Demographic parity.
    Dp,
    /// Equalized odds.
    Eo,
}

impl Notion {
    pub fn as_str(&self) -> &'static str {
        match self {
            Notion::Dp => "dp",
            Notion::Eo => "eo",
        }
    }
}

impl std::fmt::Display for Notion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Notion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dp" => Ok(Notion::Dp),
            "eo" => Ok(Notion::Eo),
            other => Err(Error::Config(format!("unknown fairness notion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub notion: Notion,
    pub epsilon_fair: f64,
}

impl FairnessSpec {
    pub fn new(notion: Notion, epsilon_fair: f64) -> Result<Self> {
        if !(epsilon_fair > 0.0 && epsilon_fair < 1.0) {
            return Err(Error::Config(format!(
                "epsilon_fair must lie in (0,1), got {epsilon_fair}"
            )));
        }
        Ok(Self {
            notion,
            epsilon_fair,
        })
    }
}

/// Per-example loss `l(p, y)` for a prediction probability `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// 0/1 loss of the prediction thresholded at 0.5.
    ZeroOne,
    /// `y(1-p) + (1-y)p`; convex, bounded by 1, linear in `p`.
    Linear,
}

impl Loss {
    /// Upper bound on the loss value.
    pub const BOUND: f64 = 1.0;

    pub fn eval(&self, p: f64, y: u8) -> f64 {
        match self {
            Loss::ZeroOne => {
                let pred = u8::from(p >= 0.5);
                f64::from(u8::from(pred != y))
            }
            Loss::Linear => {
                if y == 1 {
                    1.0 - p
                } else {
                    p
                }
            }
        }
    }
}

pub fn example_losses(probs: &[f64], d: &Dataset, loss: Loss) -> Result<Vec<f64>> {
    check_len(probs.len(), d.len())?;
    Ok(probs
        .iter()
        .zip(d.labels())
        .map(|(&p, y)| loss.eval(p, y))
        .collect())
}

pub fn weighted_risk_probs(probs: &[f64], d: &Dataset, w: &[f64], loss: Loss) -> Result<f64> {
    check_len(w.len(), d.len())?;
    let losses = example_losses(probs, d, loss)?;
    Ok(losses.iter().zip(w).map(|(l, w)| l * w).sum())
}

/// `sum_i w_i l(h(x_i, a_i), y_i)`.
pub fn weighted_risk<C: Classifier + ?Sized>(
    h: &C,
    d: &Dataset,
    w: &[f64],
    loss: Loss,
) -> Result<f64> {
    check_len(w.len(), d.len())?;
    weighted_risk_probs(&h.predict_probs(d)?, d, w, loss)
}

/// Weighted acceptance rate per group, optionally restricted to instances
/// with label `cell`.
pub fn group_rates(probs: &[f64], d: &Dataset, w: &[f64], cell: Option<u8>) -> Result<Vec<f64>> {
    check_len(probs.len(), d.len())?;
    check_len(w.len(), d.len())?;
    let k = d.group_count();
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for ((inst, &p), &wi) in d.instances().iter().zip(probs).zip(w) {
        if cell.is_none_or(|y| inst.label == y) {
            num[inst.group] += wi * p;
            den[inst.group] += wi;
        }
    }
    num.iter()
        .zip(&den)
        .enumerate()
        .map(|(g, (&n, &m))| {
            if m > 0.0 {
                Ok(n / m)
            } else {
                Err(Error::DegenerateMass(match cell {
                    None => format!("group {g} has zero weighted mass"),
                    Some(y) => format!("group {g} with label {y} has zero weighted mass"),
                }))
            }
        })
        .collect()
}

fn max_spread(rates: &[f64]) -> f64 {
    let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Largest `|R(w,a) - R(w,a')|` over group pairs.
pub fn dp_gap_probs(probs: &[f64], d: &Dataset, w: &[f64]) -> Result<f64> {
    Ok(max_spread(&group_rates(probs, d, w, None)?))
}

/// Mean of the label-0 and label-1 conditional gaps.
pub fn eo_gap_probs(probs: &[f64], d: &Dataset, w: &[f64]) -> Result<f64> {
    let g0 = max_spread(&group_rates(probs, d, w, Some(0))?);
    let g1 = max_spread(&group_rates(probs, d, w, Some(1))?);
    Ok(0.5 * (g0 + g1))
}

pub fn gap_probs(probs: &[f64], d: &Dataset, w: &[f64], notion: Notion) -> Result<f64> {
    match notion {
        Notion::Dp => dp_gap_probs(probs, d, w),
        Notion::Eo => eo_gap_probs(probs, d, w),
    }
}

pub fn dp_gap<C: Classifier + ?Sized>(h: &C, d: &Dataset, w: &[f64]) -> Result<f64> {
    dp_gap_probs(&h.predict_probs(d)?, d, w)
}

pub fn eo_gap<C: Classifier + ?Sized>(h: &C, d: &Dataset, w: &[f64]) -> Result<f64> {
    eo_gap_probs(&h.predict_probs(d)?, d, w)
}

pub fn gap<C: Classifier + ?Sized>(h: &C, d: &Dataset, w: &[f64], notion: Notion) -> Result<f64> {
    gap_probs(&h.predict_probs(d)?, d, w, notion)
}

/// Expected gap of a randomized classifier: the mean of member gaps.
pub fn gap_randomized(mu: &Ensemble, d: &Dataset, w: &[f64], notion: Notion) -> Result<f64> {
    let mut total = 0.0;
    for m in mu.members() {
        total += gap(m, d, w, notion)?;
    }
    Ok(total / mu.len() as f64)
}

/// Gap of the mixture's mean prediction. Never exceeds [`gap_randomized`].
pub fn gap_mixture(mu: &Ensemble, d: &Dataset, w: &[f64], notion: Notion) -> Result<f64> {
    gap(mu, d, w, notion)
}

/// Unweighted accuracy of predictions thresholded at 0.5.
pub fn accuracy<C: Classifier + ?Sized>(h: &C, d: &Dataset) -> Result<f64> {
    let probs = h.predict_probs(d)?;
    let correct = probs
        .iter()
        .zip(d.labels())
        .filter(|(&p, y)| u8::from(p >= 0.5) == *y)
        .count();
    Ok(correct as f64 / d.len() as f64)
}

fn check_len(actual: usize, expected: usize) -> Result<()> {
    if actual == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
