use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TrainConfig, TrainParams};
use crate::adversary::attack_curve;
use crate::data::{split, Dataset, SplitSpec};
use crate::hypothesis::{Classifier, Ensemble};
use crate::meta::{robust_train, MetaDiagnostics};
use crate::metrics::{accuracy, gap, Notion, WeightVector};
use crate::oracle::fit_logistic;
use crate::Result;

pub const ROBUST_METHOD: &str = "robust";
pub const BASELINE_METHOD: &str = "baseline";

/// Test-set accuracy and attack violation of one method, seed and radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub seed: u64,
    pub notion: Notion,
    pub eps: f64,
    pub accuracy: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

/// Hyperparameters chosen on the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub seed: u64,
    pub params: TrainParams,
    pub validation_accuracy: f64,
    pub validation_violation: f64,
    /// Whether the choice met `eps_fair` on validation; when no grid point
    /// does, the least violating one is taken.
    pub feasible: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<SeedFailure>,
    pub selections: Vec<Selection>,
}

struct Candidate {
    params: TrainParams,
    model: Ensemble,
    accuracy: f64,
    violation: f64,
}

/// Lowest validation error among fair grid points, ties broken by lower
/// violation and then grid order.
fn select(candidates: Vec<Candidate>, eps_fair: f64) -> Option<(Candidate, bool)> {
    let feasible = candidates.iter().any(|c| c.violation <= eps_fair);
    let better = |a: &Candidate, b: &Candidate| {
        if feasible {
            a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.violation < b.violation)
        } else {
            a.violation < b.violation || (a.violation == b.violation && a.accuracy > b.accuracy)
        }
    };
    let mut best: Option<Candidate> = None;
    for c in candidates {
        if feasible && c.violation > eps_fair {
            continue;
        }
        if best.as_ref().is_none_or(|b| better(&c, b)) {
            best = Some(c);
        }
    }
    best.map(|b| (b, feasible))
}

fn curve_rows<C: Classifier + ?Sized>(
    method: &str,
    model: &C,
    test: &Dataset,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<Vec<ResultRow>> {
    let acc = accuracy(model, test)?;
    Ok(attack_curve(model, test, &cfg.eps_grid, cfg.notion)?
        .into_iter()
        .map(|(eps, v)| ResultRow {
            method: method.to_string(),
            seed,
            notion: cfg.notion,
            eps,
            accuracy: acc,
            violation: v.max(0.0),
        })
        .collect())
}

fn run_seed(d: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<ResultRow>, Selection)> {
    let (train, val, test) = split(d, &SplitSpec::new(seed, cfg.split)?)?;
    let uniform = WeightVector::uniform(val.len())?;
    let mut candidates = Vec::new();
    for params in cfg.grid() {
        let (model, _) = robust_train(&train, &cfg.meta_config(&params))?;
        let accuracy = accuracy(&model, &val)?;
        let violation = gap(&model, &val, &uniform, cfg.notion)?;
        log::info!(
            "seed {seed}: B={} eta={} T_m={}: val accuracy {accuracy:.4}, violation {violation:.4}",
            params.budget,
            params.eta_inner,
            params.outer_rounds
        );
        candidates.push(Candidate {
            params,
            model,
            accuracy,
            violation,
        });
    }
    let (chosen, feasible) = select(candidates, cfg.eps_fair)
        .ok_or_else(|| crate::Error::Config("hyperparameter grid is empty".into()))?;
    let baseline = fit_logistic(&train, &cfg.baseline)?;
    let mut rows = curve_rows(super::ROBUST_METHOD, &chosen.model, &test, seed, cfg)?;
    rows.extend(curve_rows(
        super::BASELINE_METHOD,
        &baseline,
        &test,
        seed,
        cfg,
    )?);
    let selection = Selection {
        seed,
        params: chosen.params,
        validation_accuracy: chosen.accuracy,
        validation_violation: chosen.violation,
        feasible,
    };
    Ok((rows, selection))
}

/// Split, select on validation, and evaluate on test for every seed. A
/// failing seed is recorded and skipped; only data loading aborts the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let d = cfg.data.load()?;
    let grid_size = cfg.grid().len();
    if grid_size > 100 {
        log::warn!("grid search over {grid_size} points per seed; this may take a long time");
    }
    let mut report = ExperimentReport::default();
    for &seed in &cfg.seeds {
        match run_seed(&d, cfg, seed) {
            Ok((rows, sel)) => {
                report.rows.extend(rows);
                report.selections.push(sel);
            }
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                report.failures.push(SeedFailure {
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    report.rows.sort_by(|a, b| {
        (&a.method, a.seed)
            .cmp(&(&b.method, b.seed))
            .then(a.eps.total_cmp(&b.eps))
    });
    Ok(report)
}

/// Loads the data and runs the robust training loop on all of it.
pub fn train_from_config(cfg: &TrainConfig) -> Result<(Dataset, Ensemble, MetaDiagnostics)> {
    let d = cfg.data.load()?;
    let (model, diag) = robust_train(&d, &cfg.meta)?;
    Ok((d, model, diag))
}
