//! Logistic-linear classifiers and their uniform mixtures.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance};
use crate::{Error, Result};

/// Numerically stable logistic function.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Anything that outputs the probability of predicting 1.
pub trait Classifier {
    fn predict_prob(&self, inst: &Instance) -> Result<f64>;

    fn feature_dim(&self) -> usize;

    fn predict_probs(&self, d: &Dataset) -> Result<Vec<f64>> {
        d.instances().iter().map(|i| self.predict_prob(i)).collect()
    }

    fn hard_predict(&self, inst: &Instance, threshold: f64) -> Result<u8> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold {threshold} outside (0,1)"
            )));
        }
        Ok(u8::from(self.predict_prob(inst)? >= threshold))
    }
}

/// `h(x, a) = logistic(coefficients . x + intercept + group_coefficients[a])`.
///
/// `group_coefficients` is either empty (protected attribute unused) or has
/// one entry per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHypothesis {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_coefficients: Vec<f64>,
}

impl LinearHypothesis {
    pub fn new(coefficients: Vec<f64>, intercept: f64) -> Result<Self> {
        Self::with_groups(coefficients, intercept, Vec::new())
    }

    pub fn with_groups(
        coefficients: Vec<f64>,
        intercept: f64,
        group_coefficients: Vec<f64>,
    ) -> Result<Self> {
        let h = Self {
            coefficients,
            intercept,
            group_coefficients,
        };
        h.validate()?;
        Ok(h)
    }

    /// All-zero model; predicts 0.5 everywhere.
    pub fn zero(feature_dim: usize, group_count: Option<usize>) -> Self {
        Self {
            coefficients: vec![0.0; feature_dim],
            intercept: 0.0,
            group_coefficients: vec![0.0; group_count.unwrap_or(0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .coefficients
            .iter()
            .chain(&self.group_coefficients)
            .chain(std::iter::once(&self.intercept))
            .all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Numeric("model has non-finite parameters".into()))
        }
    }

    pub fn score(&self, inst: &Instance) -> Result<f64> {
        if inst.features.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                actual: inst.features.len(),
            });
        }
        let mut s = self.intercept;
        for (c, x) in self.coefficients.iter().zip(&inst.features) {
            s += c * x;
        }
        if !self.group_coefficients.is_empty() {
            s += self
                .group_coefficients
                .get(inst.group)
                .copied()
                .ok_or_else(|| Error::DimensionMismatch {
                    expected: self.group_coefficients.len(),
                    actual: inst.group + 1,
                })?;
        }
        Ok(s)
    }
}

impl Classifier for LinearHypothesis {
    fn predict_prob(&self, inst: &Instance) -> Result<f64> {
        Ok(logistic(self.score(inst)?))
    }

    fn feature_dim(&self) -> usize {
        self.coefficients.len()
    }
}

/// Uniform mixture over a nonempty list of members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LinearHypothesis>", into = "Vec<LinearHypothesis>")]
pub struct Ensemble {
    members: Vec<LinearHypothesis>,
}

impl Ensemble {
    pub fn new(members: Vec<LinearHypothesis>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("ensemble needs at least one member".into()))?;
        let dim = first.coefficients.len();
        for m in &members {
            if m.coefficients.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: m.coefficients.len(),
                });
            }
            m.validate()?;
        }
        Ok(Self { members })
    }

    pub fn single(h: LinearHypothesis) -> Self {
        Self { members: vec![h] }
    }

    pub fn members(&self) -> &[LinearHypothesis] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Uniform mixture over all members of all parts. Exact when every part
    /// has the same size.
    pub fn flatten(parts: &[Ensemble]) -> Result<Self> {
        Self::new(
            parts
                .iter()
                .flat_map(|e| e.members.iter().cloned())
                .collect(),
        )
    }

    /// Prediction vectors of every member on `d`.
    pub fn member_probs(&self, d: &Dataset) -> Result<Vec<Vec<f64>>> {
        self.members.iter().map(|m| m.predict_probs(d)).collect()
    }
}

impl TryFrom<Vec<LinearHypothesis>> for Ensemble {
    type Error = Error;

    fn try_from(members: Vec<LinearHypothesis>) -> Result<Self> {
        Self::new(members)
    }
}

impl From<Ensemble> for Vec<LinearHypothesis> {
    fn from(e: Ensemble) -> Self {
        e.members
    }
}

impl Classifier for Ensemble {
    fn predict_prob(&self, inst: &Instance) -> Result<f64> {
        let mut total = 0.0;
        for m in &self.members {
            total += m.predict_prob(inst)?;
        }
        Ok(total / self.members.len() as f64)
    }

    fn feature_dim(&self) -> usize {
        self.members[0].coefficients.len()
    }
}

/// On-disk model: a single object or an array of members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Model {
    Single(LinearHypothesis),
    Ensemble(Ensemble),
}

impl Model {
    pub fn into_ensemble(self) -> Ensemble {
        match self {
            Model::Single(h) => Ensemble::single(h),
            Model::Ensemble(e) => e,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Model = serde_json::from_str(&text)?;
        match &model {
            Model::Single(h) => h.validate()?,
            Model::Ensemble(_) => {}
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl Classifier for Model {
    fn predict_prob(&self, inst: &Instance) -> Result<f64> {
        match self {
            Model::Single(h) => h.predict_prob(inst),
            Model::Ensemble(e) => e.predict_prob(inst),
        }
    }

    fn feature_dim(&self) -> usize {
        match self {
            Model::Single(h) => h.feature_dim(),
            Model::Ensemble(e) => e.feature_dim(),
        }
    }
}
