//! Approximately fair classifier for a fixed weighting: a regularized
//! follow-the-leader learner plays against the multiplier adversary, and the
//! uniform mixture of the learner's iterates is returned.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::{Adversary, Atom, SparseLagrange};
use crate::data::Dataset;
use crate::geometry::WeightSet;
use crate::hypothesis::{Classifier, Ensemble, LinearHypothesis};
use crate::metrics::{weighted_risk_probs, Loss, Notion};
use crate::oracle::{fit_linear_objective, DescentConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApxFairConfig {
    pub notion: Notion,
    pub eps_fair: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// l1 budget of the multipliers.
    #[serde(alias = "B")]
    pub budget: f64,
    #[serde(alias = "T")]
    pub rounds: usize,
    /// Learner step; `None` means `M * sqrt(1 / (n T))`.
    pub eta_inner: Option<f64>,
    pub loss: Loss,
    pub descent: DescentConfig,
    /// Weightings the fairness constraints range over. The outer loop sets
    /// this to its own weight set.
    pub weight_set: WeightSet,
}

impl Default for ApxFairConfig {
    fn default() -> Self {
        Self {
            notion: Notion::Dp,
            eps_fair: 0.05,
            gamma1: 0.05,
            gamma2: 0.1,
            budget: 1.0,
            rounds: 5,
            eta_inner: None,
            loss: Loss::Linear,
            descent: DescentConfig::default(),
            weight_set: WeightSet::Simplex,
        }
    }
}

impl ApxFairConfig {
    /// Parameters under which the approximation guarantee holds:
    /// `B = 3M/eps`, `T = ceil(36 n / eps^2)`, `4 gamma1 + gamma2 = eps/6`.
    pub fn theory(n: usize, eps_fair: f64, notion: Notion) -> Self {
        let m = Loss::BOUND;
        Self {
            notion,
            eps_fair,
            gamma1: eps_fair / 48.0,
            gamma2: eps_fair / 12.0,
            budget: 3.0 * m / eps_fair,
            rounds: (36.0 * n as f64 / (eps_fair * eps_fair)).ceil() as usize,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("inner rounds T must be positive".into()));
        }
        if !(self.eps_fair > 0.0 && self.eps_fair < 1.0) {
            return Err(Error::Config(format!(
                "eps_fair must lie in (0,1), got {}",
                self.eps_fair
            )));
        }
        for (name, g) in [("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {g}")));
            }
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::Config(format!(
                "budget must be nonnegative, got {}",
                self.budget
            )));
        }
        self.weight_set.validate()?;
        if let Some(eta) = self.eta_inner {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!(
                    "eta_inner must be positive, got {eta}"
                )));
            }
        }
        Ok(())
    }

    pub fn eta_for(&self, n: usize) -> f64 {
        self.eta_inner
            .unwrap_or_else(|| Loss::BOUND * (1.0 / (n as f64 * self.rounds as f64)).sqrt())
    }
}

/// Adds `value * (R(w,a) - R(w,a') - eps + 4 gamma1)` for each atom.
pub fn payoff_probs(
    probs: &[f64],
    lam: &SparseLagrange,
    d: &Dataset,
    w0: &[f64],
    eps_fair: f64,
    gamma1: f64,
    loss: Loss,
) -> Result<f64> {
    let mut u = weighted_risk_probs(probs, d, w0, loss)?;
    for atom in &lam.atoms {
        u += atom.value * (atom.rate_difference(probs, d)? - eps_fair + 4.0 * gamma1);
    }
    Ok(u)
}

/// Game payoff `U(h, lambda)` under the linear surrogate loss.
pub fn payoff<C: Classifier + ?Sized>(
    h: &C,
    lam: &SparseLagrange,
    d: &Dataset,
    w0: &[f64],
    eps_fair: f64,
    gamma1: f64,
) -> Result<f64> {
    payoff_probs(
        &h.predict_probs(d)?,
        lam,
        d,
        w0,
        eps_fair,
        gamma1,
        Loss::Linear,
    )
}

fn add_atom_terms(delta: &mut [f64], atom: &Atom, d: &Dataset, scale: f64) -> Result<()> {
    let (ma, mb) = atom.masses(d)?;
    let (a, b) = atom.pair;
    for ((inst, &w), out) in d
        .instances()
        .iter()
        .zip(&atom.weights)
        .zip(delta.iter_mut())
    {
        if atom.label.is_some_and(|y| y != inst.label) {
            continue;
        }
        if inst.group == a {
            *out += scale * atom.value * w / ma;
        } else if inst.group == b {
            *out -= scale * atom.value * w / mb;
        }
    }
    Ok(())
}

/// Per-instance multiplier contribution to the learner's linear costs.
pub fn delta_terms(lam: &SparseLagrange, d: &Dataset) -> Result<Vec<f64>> {
    let mut delta = vec![0.0; d.len()];
    for atom in &lam.atoms {
        add_atom_terms(&mut delta, atom, d, 1.0)?;
    }
    Ok(delta)
}

/// `w0_i (l(1,y_i) - l(0,y_i))`: the loss part of the learner's costs.
fn loss_slopes(d: &Dataset, w0: &[f64], loss: Loss) -> Vec<f64> {
    d.labels()
        .zip(w0)
        .map(|(y, &w)| w * (loss.eval(1.0, y) - loss.eval(0.0, y)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// `U(h_t, lambda_t)`.
    pub payoff: f64,
    /// Best rate difference the adversary found against `h_t`.
    pub violation: f64,
    pub lp_value: f64,
    /// Atom placed this round, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom: Option<AtomSummary>,
    /// Size of the cumulative multiplier list after this round.
    pub cumulative_atoms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSummary {
    pub pair: (usize, usize),
    pub label: Option<u8>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PayoffTrace {
    pub records: Vec<RoundRecord>,
}

impl PayoffTrace {
    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_jsonl(&mut buf)?;
        buf.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct ApxFairOutput {
    pub ensemble: Ensemble,
    pub trace: PayoffTrace,
    /// Sum of the per-round multipliers (at most `T` atoms).
    pub cumulative: SparseLagrange,
    pub eta: f64,
}

/// Runs `T` rounds. Round `t` plays `h_t` against its best-responding
/// multipliers, then fits `h_{t+1}` to the linear costs
/// `eta * (t * loss slope + Delta(cumulative)) + 1/(2n)`.
pub fn apx_fair(d: &Dataset, w0: &[f64], cfg: &ApxFairConfig) -> Result<ApxFairOutput> {
    cfg.validate()?;
    let n = d.len();
    if w0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: w0.len(),
        });
    }
    // A single group has no rate constraints to violate.
    let adversary = if d.group_count() >= 2 {
        Some(Adversary::new(
            d,
            cfg.notion,
            cfg.gamma1,
            cfg.gamma2,
            cfg.weight_set,
        )?)
    } else {
        None
    };
    let eta = cfg.eta_for(n);
    let slopes = loss_slopes(d, w0, cfg.loss);
    let regularizer = 1.0 / (2.0 * n as f64);
    let onehot = cfg.descent.group_onehot.then_some(d.group_count());
    let mut h = LinearHypothesis::zero(d.feature_dim(), onehot);
    let mut members = Vec::with_capacity(cfg.rounds);
    let mut cumulative = SparseLagrange::empty(cfg.budget * cfg.rounds as f64);
    let mut delta = vec![0.0; n];
    let mut trace = PayoffTrace::default();
    for t in 1..=cfg.rounds {
        let probs = h.predict_probs(d)?;
        let (lam, violation, lp_value) = match &adversary {
            Some(adv) => {
                let (lam, v) = adv.best_response(&probs, cfg.eps_fair, cfg.budget)?;
                (lam, v.value, v.lp_value)
            }
            None => (SparseLagrange::empty(cfg.budget), 0.0, 0.0),
        };
        let u = payoff_probs(&probs, &lam, d, w0, cfg.eps_fair, cfg.gamma1, cfg.loss)?;
        let atom = lam.atoms.first().map(|a| AtomSummary {
            pair: a.pair,
            label: a.label,
            value: a.value,
        });
        for a in lam.atoms {
            add_atom_terms(&mut delta, &a, d, 1.0)?;
            cumulative.push(a)?;
        }
        log::debug!("inner round {t}: payoff {u:.6}, violation {violation:.6}");
        trace.records.push(RoundRecord {
            round: t,
            payoff: u,
            violation,
            lp_value,
            atom,
            cumulative_atoms: cumulative.atoms.len(),
        });
        let next = if t < cfg.rounds {
            let coeffs: Vec<f64> = slopes
                .iter()
                .zip(&delta)
                .map(|(&s, &dl)| eta * (t as f64 * s + dl) + regularizer)
                .collect();
            Some(fit_linear_objective(d, &coeffs, &cfg.descent)?)
        } else {
            None
        };
        members.push(std::mem::replace(
            &mut h,
            next.unwrap_or_else(|| LinearHypothesis::zero(0, None)),
        ));
    }
    Ok(ApxFairOutput {
        ensemble: Ensemble::new(members)?,
        trace,
        cumulative,
        eta,
    })
}

/// Duality gap of `(ensemble, cumulative / T)` in the discretized game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NashGap {
    /// `U` at the pair itself.
    pub value: f64,
    /// Multiplier best response against the ensemble.
    pub upper: f64,
    /// Smallest `U` found against the averaged multipliers.
    pub lower: f64,
    pub gap: f64,
}

/// Both best responses are approximate: the multiplier side maximizes over
/// the adversary's grid, the learner side takes the best of a fresh oracle
/// fit, every ensemble member and the zero model.
pub fn equilibrium_gap(
    out: &ApxFairOutput,
    d: &Dataset,
    w0: &[f64],
    cfg: &ApxFairConfig,
) -> Result<NashGap> {
    cfg.validate()?;
    let avg = out.cumulative.scaled(1.0 / cfg.rounds as f64);
    let probs = out.ensemble.predict_probs(d)?;
    let value = payoff_probs(&probs, &avg, d, w0, cfg.eps_fair, cfg.gamma1, cfg.loss)?;

    let risk = weighted_risk_probs(&probs, d, w0, cfg.loss)?;
    let best_diff = if d.group_count() >= 2 {
        Adversary::new(d, cfg.notion, cfg.gamma1, cfg.gamma2, cfg.weight_set)?
            .best_violation(&probs)?
            .value
    } else {
        f64::NEG_INFINITY
    };
    let upper = risk + cfg.budget * (best_diff - cfg.eps_fair + 4.0 * cfg.gamma1).max(0.0);

    let slopes = loss_slopes(d, w0, cfg.loss);
    let delta = delta_terms(&avg, d)?;
    let coeffs: Vec<f64> = slopes.iter().zip(&delta).map(|(s, dl)| s + dl).collect();
    let onehot = cfg.descent.group_onehot.then_some(d.group_count());
    let mut candidates = vec![
        fit_linear_objective(d, &coeffs, &cfg.descent)?,
        LinearHypothesis::zero(d.feature_dim(), onehot),
    ];
    candidates.extend(out.ensemble.members().iter().cloned());
    let mut lower = f64::INFINITY;
    for h in &candidates {
        let p = h.predict_probs(d)?;
        lower = lower.min(payoff_probs(
            &p,
            &avg,
            d,
            w0,
            cfg.eps_fair,
            cfg.gamma1,
            cfg.loss,
        )?);
    }
    Ok(NashGap {
        value,
        upper,
        lower,
        gap: (upper - value).max(value - lower).max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use crate::metrics::weighted_risk;

    fn four_point() -> Dataset {
        let inst = [(0.5, 0, 1), (-1.0, 0, 0), (2.0, 1, 1), (0.0, 1, 0)]
            .iter()
            .map(|&(x, g, y)| Instance {
                features: vec![x],
                group: g,
                label: y,
            })
            .collect();
        Dataset::new(inst, 2).unwrap()
    }

    fn atom(weights: Vec<f64>, pair: (usize, usize), value: f64) -> Atom {
        Atom {
            weights,
            pair,
            label: None,
            value,
        }
    }

    #[test]
    fn payoff_by_substitution() {
        let d = four_point();
        let h = LinearHypothesis::new(vec![1.0], 0.0).unwrap();
        let w0 = [0.25; 4];
        let empty = SparseLagrange::empty(1.0);
        let risk = weighted_risk(&h, &d, &w0, Loss::Linear).unwrap();
        assert_eq!(payoff(&h, &empty, &d, &w0, 0.1, 0.01).unwrap(), risk);

        let w = vec![0.1, 0.3, 0.2, 0.4];
        let mut lam = SparseLagrange::empty(2.0);
        lam.push(atom(w.clone(), (0, 1), 2.0)).unwrap();
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let ra = (0.1 * s(0.5) + 0.3 * s(-1.0)) / 0.4;
        let rb = (0.2 * s(2.0) + 0.4 * s(0.0)) / 0.6;
        let expected = risk + 2.0 * (ra - rb - 0.1 + 0.04);
        assert!((payoff(&h, &lam, &d, &w0, 0.1, 0.01).unwrap() - expected).abs() < 1e-12);

        // boundary: constraint exactly at eps - 4 gamma1 contributes nothing
        let eps = ra - rb + 0.04;
        assert!((payoff(&h, &lam, &d, &w0, eps, 0.01).unwrap() - risk).abs() < 1e-12);
    }

    #[test]
    fn delta_unfolds_definition() {
        let d = four_point();
        assert_eq!(
            delta_terms(&SparseLagrange::empty(1.0), &d).unwrap(),
            vec![0.0; 4]
        );
        let w = vec![0.1, 0.3, 0.2, 0.4];
        let mut lam = SparseLagrange::empty(6.0);
        lam.push(atom(w.clone(), (0, 1), 3.0)).unwrap();
        let delta = delta_terms(&lam, &d).unwrap();
        let expected = [
            3.0 * 0.1 / 0.4,
            3.0 * 0.3 / 0.4,
            -3.0 * 0.2 / 0.6,
            -3.0 * 0.4 / 0.6,
        ];
        for (a, b) in delta.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        lam.push(atom(w, (1, 0), 3.0)).unwrap();
        assert!(delta_terms(&lam, &d)
            .unwrap()
            .iter()
            .all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn delta_is_payoff_gradient() {
        // U is linear in the prediction vector with slope L_i.
        let d = four_point();
        let w0 = [0.1, 0.2, 0.3, 0.4];
        let mut lam = SparseLagrange::empty(5.0);
        lam.push(atom(vec![0.2, 0.3, 0.1, 0.4], (1, 0), 1.5))
            .unwrap();
        lam.push(atom(vec![0.25; 4], (0, 1), 0.5)).unwrap();
        let delta = delta_terms(&lam, &d).unwrap();
        let slopes = loss_slopes(&d, &w0, Loss::Linear);
        let base = [0.3, 0.6, 0.2, 0.9];
        let u0 = payoff_probs(&base, &lam, &d, &w0, 0.1, 0.01, Loss::Linear).unwrap();
        for i in 0..4 {
            let mut p = base;
            p[i] += 0.05;
            let u1 = payoff_probs(&p, &lam, &d, &w0, 0.1, 0.01, Loss::Linear).unwrap();
            assert!(((u1 - u0) / 0.05 - (slopes[i] + delta[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_mass_atom_is_error() {
        let d = four_point();
        let mut lam = SparseLagrange::empty(1.0);
        lam.push(atom(vec![0.5, 0.5, 0.0, 0.0], (0, 1), 1.0))
            .unwrap();
        assert!(matches!(
            delta_terms(&lam, &d),
            Err(Error::DegenerateMass(_))
        ));
    }

    #[test]
    fn zero_rounds_rejected() {
        let cfg = ApxFairConfig {
            rounds: 0,
            ..ApxFairConfig::default()
        };
        assert!(apx_fair(&four_point(), &[0.25; 4], &cfg).is_err());
    }

    #[test]
    fn single_round_is_initial_model() {
        let d = four_point();
        let cfg = ApxFairConfig {
            rounds: 1,
            ..ApxFairConfig::default()
        };
        let a = apx_fair(&d, &[0.25; 4], &cfg).unwrap();
        let b = apx_fair(&d, &[0.25; 4], &cfg).unwrap();
        assert_eq!(a.ensemble, b.ensemble);
        assert_eq!(a.ensemble.members(), &[LinearHypothesis::zero(1, None)]);
        assert_eq!(a.trace.records.len(), 1);
    }

    #[test]
    fn theory_parameters() {
        let c = ApxFairConfig::theory(10, 0.3, Notion::Dp);
        assert!((c.budget - 10.0).abs() < 1e-12);
        assert_eq!(c.rounds, 4000);
        assert!((4.0 * c.gamma1 + c.gamma2 - 0.05).abs() < 1e-12);
        assert!((c.eta_for(10) - (1.0f64 / 40000.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn trace_is_complete_and_finite() {
        let d = four_point();
        let cfg = ApxFairConfig {
            rounds: 6,
            gamma1: 0.1,
            gamma2: 0.2,
            ..ApxFairConfig::default()
        };
        let out = apx_fair(&d, &[0.25; 4], &cfg).unwrap();
        assert_eq!(out.trace.records.len(), 6);
        assert_eq!(out.ensemble.len(), 6);
        assert!(out.cumulative.atoms.len() <= 6);
        assert!(out.trace.records.iter().all(|r| r.payoff.is_finite()));
        let mut buf = Vec::new();
        out.trace.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
        let gap = equilibrium_gap(&out, &d, &[0.25; 4], &cfg).unwrap();
        assert!(gap.gap >= 0.0 && gap.lower <= gap.value + 1e-12);
    }

    #[test]
    fn single_group_matches_unconstrained_fit() {
        let inst: Vec<Instance> = (0..8)
            .map(|i| Instance {
                features: vec![i as f64 - 3.5],
                group: 0,
                label: u8::from(i >= 4),
            })
            .collect();
        let d = Dataset::new(inst, 1).unwrap();
        let w0 = [0.125; 8];
        let cfg = ApxFairConfig {
            rounds: 40,
            // large step so the regularizer is negligible against the loss
            eta_inner: Some(50.0),
            ..ApxFairConfig::default()
        };
        let out = apx_fair(&d, &w0, &cfg).unwrap();
        assert!(out.cumulative.is_empty());
        let slopes = loss_slopes(&d, &w0, Loss::Linear);
        let best = fit_linear_objective(&d, &slopes, &cfg.descent).unwrap();
        let best_risk = weighted_risk(&best, &d, &w0, Loss::Linear).unwrap();
        let member_risks: Vec<f64> = out.ensemble.members()[1..]
            .iter()
            .map(|h| weighted_risk(h, &d, &w0, Loss::Linear).unwrap())
            .collect();
        // every fitted member is within descent tolerance of the direct fit
        for r in &member_risks {
            assert!((r - best_risk).abs() < 0.02, "{r} vs {best_risk}");
        }
    }
}
