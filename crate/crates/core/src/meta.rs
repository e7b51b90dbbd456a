//! Outer robust loop: projected gradient ascent over instance weightings,
//! answered each round by an approximately fair ensemble for the current
//! weighting.

use serde::{Deserialize, Serialize};

use crate::apxfair::{apx_fair, equilibrium_gap, ApxFairConfig, ApxFairOutput};
use crate::data::Dataset;
use crate::geometry::WeightSet;
use crate::hypothesis::{Classifier, Ensemble};
use crate::linprog::{solve, LinearProgram, LpStatus};
use crate::metrics::{example_losses, gap_mixture, gap_randomized, Loss, WeightVector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Number of ascent steps `T_m`; zero returns the first inner ensemble.
    #[serde(alias = "T_m")]
    pub rounds: usize,
    /// Ascent step; `None` means `sqrt(2 / T_m)`.
    pub eta_meta: Option<f64>,
    pub weight_set: WeightSet,
    /// Its `weight_set` is replaced by the outer one.
    pub inner: ApxFairConfig,
    /// Measure the inner equilibrium gap every round (one extra adversary
    /// call and oracle fit per round).
    pub track_gap: bool,
    /// Keep each round's weighting in the diagnostics.
    pub record_weights: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            eta_meta: None,
            weight_set: WeightSet::default(),
            inner: ApxFairConfig::default(),
            track_gap: false,
            record_weights: false,
        }
    }
}

impl MetaConfig {
    pub fn eta(&self) -> f64 {
        self.eta_meta.unwrap_or_else(|| {
            if self.rounds == 0 {
                0.0
            } else {
                (2.0 / self.rounds as f64).sqrt()
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.weight_set.validate()?;
        self.inner.validate()?;
        if let Some(eta) = self.eta_meta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!(
                    "eta_meta must be nonnegative, got {eta}"
                )));
            }
        }
        Ok(())
    }
}

/// Gradient of `w -> l(h, w)`: the per-example surrogate losses, since the
/// weighted loss is linear in `w`.
pub fn loss_gradient<C: Classifier + ?Sized>(h: &C, d: &Dataset) -> Result<Vec<f64>> {
    example_losses(&h.predict_probs(d)?, d, Loss::Linear)
}

/// `max_{w in ws} w . losses`.
pub fn robust_loss_values(losses: &[f64], ws: WeightSet) -> Result<f64> {
    ws.validate()?;
    let n = losses.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    match ws {
        WeightSet::Simplex => Ok(losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        WeightSet::Box { .. } => {
            let lp = LinearProgram::new(losses.to_vec())
                .with_bounds(vec![ws.bounds(n); n])
                .equality(vec![1.0; n], 1.0);
            let sol = solve(&lp)?;
            match sol.status {
                LpStatus::Optimal => Ok(sol.value),
                s => Err(Error::Internal(format!("robust loss LP is {s:?}"))),
            }
        }
    }
}

/// Worst-case surrogate loss of `h` over the weight set.
pub fn robust_loss<C: Classifier + ?Sized>(h: &C, d: &Dataset, ws: WeightSet) -> Result<f64> {
    robust_loss_values(&loss_gradient(h, d)?, ws)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRound {
    pub round: usize,
    /// `l(h_t, w_t)`.
    pub weighted_loss: f64,
    /// `max_w l(h_t, w)`.
    pub robust_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDiagnostics {
    pub eta_meta: f64,
    pub rounds: Vec<MetaRound>,
    /// `max_w l(h_f, w)` for the flattened output.
    pub final_robust_loss: f64,
    /// Mean of `l(h_t, w_t)` over all rounds.
    pub running_average: f64,
    /// Twice the largest measured inner gap, a proxy for the oracle's
    /// approximation error. Present only when gaps are tracked.
    pub alpha_hat: Option<f64>,
    /// Mean of member gaps on uniform weights.
    pub gap_randomized: f64,
    /// Gap of the averaged prediction on uniform weights.
    pub gap_mixture: f64,
    /// Weighting of the last round.
    pub final_weights: Vec<f64>,
}

/// Returns the uniform mixture of all inner ensembles, flattened.
pub fn robust_train(d: &Dataset, cfg: &MetaConfig) -> Result<(Ensemble, MetaDiagnostics)> {
    robust_train_observed(d, cfg, |_, _| Ok(()))
}

/// [`robust_train`], handing each outer round's inner run to `observe`
/// before it is folded into the output. An observer error aborts training.
pub fn robust_train_observed<F>(
    d: &Dataset,
    cfg: &MetaConfig,
    mut observe: F,
) -> Result<(Ensemble, MetaDiagnostics)>
where
    F: FnMut(usize, &ApxFairOutput) -> Result<()>,
{
    cfg.validate()?;
    let n = d.len();
    let eta = cfg.eta();
    let inner = ApxFairConfig {
        weight_set: cfg.weight_set,
        ..cfg.inner.clone()
    };
    let mut w = WeightVector::uniform(n)?.into_inner();
    let mut parts: Vec<Ensemble> = Vec::with_capacity(cfg.rounds + 1);
    let mut rounds = Vec::with_capacity(cfg.rounds + 1);
    for t in 0..=cfg.rounds {
        if t > 0 {
            let grad = loss_gradient(&parts[t - 1], d)?;
            let stepped: Vec<f64> = w.iter().zip(&grad).map(|(wi, g)| wi + eta * g).collect();
            w = cfg.weight_set.project(&stepped)?.into_inner();
        }
        let out = apx_fair(d, &w, &inner)?;
        observe(t, &out)?;
        let losses = loss_gradient(&out.ensemble, d)?;
        let weighted_loss = losses.iter().zip(&w).map(|(l, wi)| l * wi).sum();
        let inner_gap = if cfg.track_gap {
            Some(equilibrium_gap(&out, d, &w, &inner)?.gap)
        } else {
            None
        };
        let record = MetaRound {
            round: t,
            weighted_loss,
            robust_loss: robust_loss_values(&losses, cfg.weight_set)?,
            inner_gap,
            weights: cfg.record_weights.then(|| w.clone()),
        };
        log::debug!(
            "outer round {t}: loss {:.6}, robust loss {:.6}",
            record.weighted_loss,
            record.robust_loss
        );
        rounds.push(record);
        parts.push(out.ensemble);
    }
    let ensemble = Ensemble::flatten(&parts)?;
    let uniform = WeightVector::uniform(n)?;
    let (gap_r, gap_m) = if d.group_count() >= 2 {
        (
            gap_randomized(&ensemble, d, &uniform, cfg.inner.notion)?,
            gap_mixture(&ensemble, d, &uniform, cfg.inner.notion)?,
        )
    } else {
        (0.0, 0.0)
    };
    let diagnostics = MetaDiagnostics {
        eta_meta: eta,
        final_robust_loss: robust_loss(&ensemble, d, cfg.weight_set)?,
        running_average: rounds.iter().map(|r| r.weighted_loss).sum::<f64>() / rounds.len() as f64,
        alpha_hat: cfg.track_gap.then(|| {
            2.0 * rounds
                .iter()
                .filter_map(|r| r.inner_gap)
                .fold(0.0, f64::max)
        }),
        gap_randomized: gap_r,
        gap_mixture: gap_m,
        final_weights: w,
        rounds,
    };
    Ok((ensemble, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use crate::hypothesis::LinearHypothesis;
    use proptest::prelude::*;

    fn toy(n: usize) -> Dataset {
        let inst = (0..n)
            .map(|i| Instance {
                features: vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()],
                group: i % 2,
                label: u8::from(i % 3 == 0),
            })
            .collect();
        Dataset::new(inst, 2).unwrap()
    }

    /// Greedy: start every weight at the lower bound, then pour the
    /// remaining mass into the largest losses up to the upper bound.
    fn greedy_box(losses: &[f64], lo: f64, hi: f64) -> f64 {
        let mut order: Vec<usize> = (0..losses.len()).collect();
        order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]));
        let mut w = vec![lo; losses.len()];
        let mut left = 1.0 - lo * losses.len() as f64;
        for i in order {
            let add = left.min(hi - lo);
            w[i] += add;
            left -= add;
        }
        w.iter().zip(losses).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn robust_loss_examples() {
        let losses = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(
            robust_loss_values(&losses, WeightSet::Simplex).unwrap(),
            0.4
        );
        let mean = robust_loss_values(&losses, WeightSet::Box { radius: 0.0 }).unwrap();
        assert!((mean - 0.25).abs() < 1e-12);
        let boxed = robust_loss_values(&losses, WeightSet::Box { radius: 0.5 }).unwrap();
        let oracle = greedy_box(&losses, 0.125, 0.375);
        assert!((boxed - oracle).abs() < 1e-12);
        assert!((boxed - 0.3).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn box_lp_matches_greedy(
            losses in proptest::collection::vec(0.0f64..1.0, 1..12),
            radius in 0.0f64..1.0,
        ) {
            let n = losses.len() as f64;
            let lp = robust_loss_values(&losses, WeightSet::Box { radius }).unwrap();
            let greedy = greedy_box(&losses, (1.0 - radius) / n, (1.0 + radius) / n);
            prop_assert!((lp - greedy).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_examples() {
        let d = toy(6);
        let half = LinearHypothesis::zero(2, None);
        assert!(loss_gradient(&half, &d).unwrap().iter().all(|&g| g == 0.5));
    }

    #[test]
    fn zero_outer_rounds_is_one_inner_run() {
        let d = toy(8);
        let cfg = MetaConfig {
            rounds: 0,
            inner: ApxFairConfig {
                rounds: 3,
                gamma1: 0.1,
                gamma2: 0.2,
                ..ApxFairConfig::default()
            },
            ..MetaConfig::default()
        };
        let (e, diag) = robust_train(&d, &cfg).unwrap();
        let w0 = WeightVector::uniform(8).unwrap();
        let inner = ApxFairConfig {
            weight_set: cfg.weight_set,
            ..cfg.inner.clone()
        };
        let direct = apx_fair(&d, &w0, &inner).unwrap();
        assert_eq!(e, direct.ensemble);
        assert_eq!(diag.rounds.len(), 1);
    }

    #[test]
    fn single_instance_has_fixed_weight() {
        let d = Dataset::new(
            vec![Instance {
                features: vec![1.0],
                group: 0,
                label: 1,
            }],
            1,
        )
        .unwrap();
        let cfg = MetaConfig {
            rounds: 3,
            ..MetaConfig::default()
        };
        let (e, diag) = robust_train(&d, &cfg).unwrap();
        assert_eq!(diag.final_weights, vec![1.0]);
        let plain: f64 = loss_gradient(&e, &d).unwrap()[0];
        assert!((diag.final_robust_loss - plain).abs() < 1e-12);
    }

    #[test]
    fn weights_stay_in_set_and_flattening_is_linear() {
        let d = toy(10);
        let cfg = MetaConfig {
            rounds: 4,
            weight_set: WeightSet::Box { radius: 0.3 },
            inner: ApxFairConfig {
                rounds: 3,
                gamma1: 0.1,
                gamma2: 0.2,
                eta_inner: Some(1.0),
                ..ApxFairConfig::default()
            },
            track_gap: true,
            ..MetaConfig::default()
        };
        let (e, diag) = robust_train(&d, &cfg).unwrap();
        assert!(cfg.weight_set.contains(&diag.final_weights, 1e-9));
        assert_eq!(e.len(), 15);
        assert!((diag.eta_meta - (0.5f64).sqrt()).abs() < 1e-12);
        assert!(diag.alpha_hat.unwrap() >= 0.0);
        let w = WeightVector::uniform(10).unwrap();
        let risk =
            |h: &dyn Classifier| crate::metrics::weighted_risk(h, &d, &w, Loss::Linear).unwrap();
        let mean: f64 = e.members().iter().map(|h| risk(h)).sum::<f64>() / e.len() as f64;
        assert!((risk(&e) - mean).abs() < 1e-12);
    }
}
