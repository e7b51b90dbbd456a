//! Cost-sensitive classification oracle.
//!
//! Minimizing `sum_i c1_i h_i + c0_i (1 - h_i)` over hypotheses equals
//! minimizing `sum_i L_i h_i` with `L = c1 - c0`. The heuristic here runs
//! full-batch gradient descent on the smooth surrogate
//! `sum_i L_i logistic(score_i)` from the zero model.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::hypothesis::{logistic, LinearHypothesis};
use crate::metrics::Loss;
use crate::{Error, Result};

/// Per-instance costs of predicting 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVector {
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
}

impl CostVector {
    pub fn new(c0: Vec<f64>, c1: Vec<f64>) -> Result<Self> {
        if c0.len() != c1.len() {
            return Err(Error::DimensionMismatch {
                expected: c0.len(),
                actual: c1.len(),
            });
        }
        if c0.iter().chain(&c1).any(|c| !c.is_finite()) {
            return Err(Error::Numeric("costs must be finite".into()));
        }
        Ok(Self { c0, c1 })
    }

    /// `L_i = c1_i - c0_i`.
    pub fn differences(&self) -> Vec<f64> {
        self.c1.iter().zip(&self.c0).map(|(a, b)| a - b).collect()
    }

    /// `sum_i c1_i p_i + c0_i (1 - p_i)`.
    pub fn objective(&self, probs: &[f64]) -> f64 {
        probs
            .iter()
            .zip(self.c0.iter().zip(&self.c1))
            .map(|(p, (c0, c1))| c1 * p + c0 * (1.0 - p))
            .sum()
    }
}

/// `c0_i = l(0, y_i) w0_i` and `c1_i = l(1, y_i) w0_i + delta_i`.
pub fn build_costs(d: &Dataset, w0: &[f64], delta: &[f64], loss: Loss) -> Result<CostVector> {
    for len in [w0.len(), delta.len()] {
        if len != d.len() {
            return Err(Error::DimensionMismatch {
                expected: d.len(),
                actual: len,
            });
        }
    }
    let mut c0 = Vec::with_capacity(d.len());
    let mut c1 = Vec::with_capacity(d.len());
    for ((y, &w), &dl) in d.labels().zip(w0).zip(delta) {
        c0.push(loss.eval(0.0, y) * w);
        c1.push(loss.eval(1.0, y) * w + dl);
    }
    CostVector::new(c0, c1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentConfig {
    pub step: f64,
    pub iterations: usize,
    /// Stop once the gradient's max-norm drops below this.
    pub tolerance: f64,
    /// Add one intercept per protected group to the model.
    pub group_onehot: bool,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            iterations: 500,
            tolerance: 1e-6,
            group_onehot: false,
        }
    }
}

/// Column means and scales used to run descent in standardized coordinates.
/// Constant columns keep scale 1.
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(d: &Dataset) -> Self {
        let p = d.feature_dim();
        let n = d.len() as f64;
        let mut mean = vec![0.0; p];
        for inst in d.instances() {
            for (m, x) in mean.iter_mut().zip(&inst.features) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; p];
        for inst in d.instances() {
            for ((v, x), m) in var.iter_mut().zip(&inst.features).zip(&mean) {
                *v += (x - m).powi(2) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    fn transform(&self, d: &Dataset) -> Vec<Vec<f64>> {
        d.instances()
            .iter()
            .map(|inst| {
                inst.features
                    .iter()
                    .zip(self.mean.iter().zip(&self.scale))
                    .map(|(x, (m, s))| (x - m) / s)
                    .collect()
            })
            .collect()
    }

    /// Maps standardized parameters back to raw-feature parameters.
    fn to_raw(&self, params: &Params) -> Result<LinearHypothesis> {
        let coefficients: Vec<f64> = params
            .weights
            .iter()
            .zip(&self.scale)
            .map(|(w, s)| w / s)
            .collect();
        let shift: f64 = coefficients
            .iter()
            .zip(&self.mean)
            .map(|(c, m)| c * m)
            .sum();
        LinearHypothesis::with_groups(coefficients, params.bias - shift, params.groups.clone())
    }
}

#[derive(Debug, Clone)]
struct Params {
    weights: Vec<f64>,
    bias: f64,
    groups: Vec<f64>,
}

impl Params {
    fn zero(p: usize, k: usize) -> Self {
        Self {
            weights: vec![0.0; p],
            bias: 0.0,
            groups: vec![0.0; k],
        }
    }

    fn score(&self, x: &[f64], group: usize) -> f64 {
        let mut s = self.bias;
        for (w, v) in self.weights.iter().zip(x) {
            s += w * v;
        }
        if !self.groups.is_empty() {
            s += self.groups[group];
        }
        s
    }
}

/// Heuristic minimizer of `sum_i coeffs_i h(x_i, a_i)`.
///
/// The objective at the returned model never exceeds its value at the zero
/// model. Coefficients are rescaled to unit l1 norm first, which leaves the
/// minimizer unchanged and makes the step size scale free.
pub fn fit_linear_objective(
    d: &Dataset,
    coeffs: &[f64],
    cfg: &DescentConfig,
) -> Result<LinearHypothesis> {
    if coeffs.len() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            actual: coeffs.len(),
        });
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric(
            "objective coefficients must be finite".into(),
        ));
    }
    let k = if cfg.group_onehot { d.group_count() } else { 0 };
    let std = Standardizer::fit(d);
    let total: f64 = coeffs.iter().map(|c| c.abs()).sum();
    if total == 0.0 {
        return std.to_raw(&Params::zero(d.feature_dim(), k));
    }
    let c: Vec<f64> = coeffs.iter().map(|v| v / total).collect();
    let xs = std.transform(d);
    let groups: Vec<usize> = d.groups().collect();

    let objective = |p: &Params| -> f64 {
        xs.iter()
            .zip(&groups)
            .zip(&c)
            .map(|((x, &g), ci)| ci * logistic(p.score(x, g)))
            .sum()
    };

    let mut params = Params::zero(d.feature_dim(), k);
    let mut best = params.clone();
    let mut best_value = objective(&params);
    for _ in 0..cfg.iterations {
        let mut gw = vec![0.0; params.weights.len()];
        let mut gb = 0.0;
        let mut gg = vec![0.0; k];
        for ((x, &g), ci) in xs.iter().zip(&groups).zip(&c) {
            let s = logistic(params.score(x, g));
            let f = ci * s * (1.0 - s);
            for (acc, v) in gw.iter_mut().zip(x) {
                *acc += f * v;
            }
            gb += f;
            if k > 0 {
                gg[g] += f;
            }
        }
        let norm = gw
            .iter()
            .chain(&gg)
            .fold(gb.abs(), |acc, v| acc.max(v.abs()));
        if !norm.is_finite() {
            return Err(Error::Numeric(
                "non-finite gradient in cost-sensitive fit".into(),
            ));
        }
        if norm < cfg.tolerance {
            break;
        }
        for (w, g) in params.weights.iter_mut().zip(&gw) {
            *w -= cfg.step * g;
        }
        params.bias -= cfg.step * gb;
        for (w, g) in params.groups.iter_mut().zip(&gg) {
            *w -= cfg.step * g;
        }
        let value = objective(&params);
        if !value.is_finite() {
            return Err(Error::Numeric(
                "non-finite objective in cost-sensitive fit".into(),
            ));
        }
        if value < best_value {
            best_value = value;
            best = params.clone();
        }
    }
    std.to_raw(&best)
}

/// Best response to `costs`: minimizes `sum_i L_i h(x_i, a_i)`.
pub fn cost_sensitive_fit(
    d: &Dataset,
    costs: &CostVector,
    cfg: &DescentConfig,
) -> Result<LinearHypothesis> {
    if costs.c0.len() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            actual: costs.c0.len(),
        });
    }
    fit_linear_objective(d, &costs.differences(), cfg)
}

/// Settings for the unconstrained logistic-regression baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub step: f64,
    pub iterations: usize,
    pub tolerance: f64,
    /// Ridge penalty on feature coefficients (not the intercepts).
    pub l2: f64,
    pub group_onehot: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            step: 1.0,
            iterations: 2000,
            tolerance: 1e-8,
            l2: 1e-3,
            group_onehot: false,
        }
    }
}

/// Mean log-loss logistic regression by full-batch gradient descent.
pub fn fit_logistic(d: &Dataset, cfg: &LogisticConfig) -> Result<LinearHypothesis> {
    let k = if cfg.group_onehot { d.group_count() } else { 0 };
    let std = Standardizer::fit(d);
    let xs = std.transform(d);
    let groups: Vec<usize> = d.groups().collect();
    let labels: Vec<f64> = d.labels().map(f64::from).collect();
    let n = d.len() as f64;
    let mut params = Params::zero(d.feature_dim(), k);
    for _ in 0..cfg.iterations {
        let mut gw: Vec<f64> = params.weights.iter().map(|w| cfg.l2 * w).collect();
        let mut gb = 0.0;
        let mut gg = vec![0.0; k];
        for ((x, &g), y) in xs.iter().zip(&groups).zip(&labels) {
            let r = (logistic(params.score(x, g)) - y) / n;
            for (acc, v) in gw.iter_mut().zip(x) {
                *acc += r * v;
            }
            gb += r;
            if k > 0 {
                gg[g] += r;
            }
        }
        let norm = gw
            .iter()
            .chain(&gg)
            .fold(gb.abs(), |acc, v| acc.max(v.abs()));
        if !norm.is_finite() {
            return Err(Error::Numeric("non-finite gradient in logistic fit".into()));
        }
        if norm < cfg.tolerance {
            break;
        }
        for (w, g) in params.weights.iter_mut().zip(&gw) {
            *w -= cfg.step * g;
        }
        params.bias -= cfg.step * gb;
        for (w, g) in params.groups.iter_mut().zip(&gg) {
            *w -= cfg.step * g;
        }
    }
    std.to_raw(&params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use crate::hypothesis::Classifier;
    use crate::metrics::accuracy;
    use proptest::prelude::*;

    fn line(xs: &[f64], labels: &[u8]) -> Dataset {
        let inst = xs
            .iter()
            .zip(labels)
            .map(|(&x, &y)| Instance {
                features: vec![x],
                group: 0,
                label: y,
            })
            .collect();
        Dataset::new(inst, 1).unwrap()
    }

    fn linear_objective(h: &LinearHypothesis, d: &Dataset, c: &[f64]) -> f64 {
        let p = h.predict_probs(d).unwrap();
        p.iter().zip(c).map(|(p, c)| p * c).sum()
    }

    #[test]
    fn cost_examples() {
        let d = line(&[0.0, 1.0, 2.0], &[1, 0, 1]);
        let w0 = [0.2, 0.3, 0.1];
        let c = build_costs(&d, &w0, &[0.0; 3], Loss::Linear).unwrap();
        assert_eq!((c.c0[0], c.c1[0]), (0.2, 0.0));
        assert_eq!((c.c0[1], c.c1[1]), (0.0, 0.3));
        let c = build_costs(&d, &w0, &[0.0, 0.0, 0.2], Loss::Linear).unwrap();
        assert_eq!(c.c1[2], 0.2);
        assert!(build_costs(&d, &w0, &[0.0; 2], Loss::Linear).is_err());
    }

    #[test]
    fn all_negative_costs_push_up() {
        let d = line(&[-1.0, 0.5, 2.0, 3.0], &[0, 0, 1, 1]);
        let l = [-0.3, -0.1, -0.4, -0.2];
        let h = fit_linear_objective(&d, &l, &DescentConfig::default()).unwrap();
        let half: f64 = l.iter().map(|c| 0.5 * c).sum();
        assert!(linear_objective(&h, &d, &l) <= half);
        assert!(h.predict_probs(&d).unwrap().iter().all(|&p| p >= 0.5));
    }

    #[test]
    fn zero_costs_return_zero_model() {
        let d = line(&[1.0, 2.0], &[0, 1]);
        let h = fit_linear_objective(&d, &[0.0, 0.0], &DescentConfig::default()).unwrap();
        assert_eq!(h, LinearHypothesis::zero(1, None));
    }

    /// Exhaustive optimum of `sum L_i 1[predict 1]` over thresholds in both
    /// orientations, including all-0 and all-1.
    fn threshold_sweep(xs: &[f64], l: &[f64]) -> f64 {
        let mut cuts: Vec<f64> = xs.to_vec();
        cuts.sort_by(f64::total_cmp);
        let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
        candidates.extend(cuts);
        let mut best = 0.0f64;
        for &t in &candidates {
            let above: f64 = xs
                .iter()
                .zip(l)
                .filter(|(&x, _)| x >= t)
                .map(|(_, c)| c)
                .sum();
            let below: f64 = xs
                .iter()
                .zip(l)
                .filter(|(&x, _)| x < t)
                .map(|(_, c)| c)
                .sum();
            best = best.min(above).min(below);
        }
        best
    }

    #[test]
    fn separable_instance_near_threshold_optimum() {
        let xs: Vec<f64> = (0..40)
            .map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / 40.0)
            .collect();
        let l: Vec<f64> = xs.iter().map(|x| x * (1.0 + x.abs())).collect();
        let d = line(&xs, &vec![0; xs.len()]);
        let h = fit_linear_objective(&d, &l, &DescentConfig::default()).unwrap();
        let hard: f64 = h
            .predict_probs(&d)
            .unwrap()
            .iter()
            .zip(&l)
            .filter(|(&p, _)| p >= 0.5)
            .map(|(_, c)| c)
            .sum();
        let opt = threshold_sweep(&xs, &l);
        assert!(opt < 0.0);
        assert!(hard <= opt * 0.95, "heuristic {hard} vs optimum {opt}");
    }

    #[test]
    fn logistic_baseline_learns_separable_data() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<u8> = xs.iter().map(|&x| u8::from(x > 2.5)).collect();
        let d = line(&xs, &ys);
        let h = fit_logistic(&d, &LogisticConfig::default()).unwrap();
        assert!(accuracy(&h, &d).unwrap() >= 0.98);
    }

    #[test]
    fn fit_is_deterministic() {
        let d = line(&[-1.0, 0.0, 1.0, 2.0], &[0, 1, 0, 1]);
        let l = [0.3, -0.2, 0.1, -0.4];
        let cfg = DescentConfig::default();
        assert_eq!(
            fit_linear_objective(&d, &l, &cfg).unwrap(),
            fit_linear_objective(&d, &l, &cfg).unwrap()
        );
    }

    proptest! {
        #[test]
        fn common_shift_keeps_objective_gap(
            xs in proptest::collection::vec(-2.0f64..2.0, 6),
            c0 in proptest::collection::vec(0.0f64..1.0, 6),
            c1 in proptest::collection::vec(0.0f64..1.0, 6),
            shift in proptest::collection::vec(0.0f64..1.0, 6),
        ) {
            let d = line(&xs, &[0, 1, 0, 1, 0, 1]);
            let cfg = DescentConfig::default();
            let base = CostVector::new(c0.clone(), c1.clone()).unwrap();
            let shifted = CostVector::new(
                c0.iter().zip(&shift).map(|(a, s)| a + s).collect(),
                c1.iter().zip(&shift).map(|(a, s)| a + s).collect(),
            ).unwrap();
            let h1 = cost_sensitive_fit(&d, &base, &cfg).unwrap();
            let h2 = cost_sensitive_fit(&d, &shifted, &cfg).unwrap();
            // the objective shifts by sum(shift) for every model
            let constant: f64 = shift.iter().sum();
            let p1 = h1.predict_probs(&d).unwrap();
            let p2 = h2.predict_probs(&d).unwrap();
            let gap1 = shifted.objective(&p1) - base.objective(&p1);
            let gap2 = shifted.objective(&p2) - base.objective(&p2);
            prop_assert!((gap1 - constant).abs() < 1e-9);
            prop_assert!((gap2 - constant).abs() < 1e-9);
            prop_assert!((base.objective(&p1) - base.objective(&p2)).abs() < 1e-9);
        }
    }
}
