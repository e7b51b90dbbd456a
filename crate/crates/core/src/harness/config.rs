use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::apxfair::ApxFairConfig;
use crate::data::synthetic::{planted, PlantedConfig};
use crate::data::{load_csv, Dataset, Schema};
use crate::geometry::WeightSet;
use crate::meta::MetaConfig;
use crate::metrics::{Loss, Notion};
use crate::oracle::{DescentConfig, LogisticConfig};
use crate::{Error, Result};

/// Where the instances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Csv { path: PathBuf, schema: Schema },
    Planted(PlantedConfig),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Csv { path, schema } => load_csv(path, schema),
            DataSource::Planted(cfg) => planted(cfg),
        }
    }

    fn rebase(&mut self, base: &Path) {
        if let DataSource::Csv { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

/// `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |what: &str| Error::Config(format!("invalid grid `{spec}`: {what}"));
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(&format!("`{s}` is not a number")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step.is_nan() || step <= 0.0 || stop < start {
                return Err(bad("need step > 0 and stop >= start"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=count)
                .map(|i| round9(start + i as f64 * step))
                .collect()
        }
        [_] => spec.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad("expected start:stop:step or a comma list")),
    };
    if values.is_empty() {
        return Err(bad("empty"));
    }
    Ok(values)
}

/// Strips accumulated floating-point noise from grid points.
fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

fn steps(start: f64, step: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| round9(start + i as f64 * step))
        .collect()
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub budget: f64,
    pub eta_inner: f64,
    pub outer_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub notion: Notion,
    pub eps_fair: f64,
    /// Multiplier budgets `B`.
    pub budgets: Vec<f64>,
    /// Inner learner steps.
    pub etas: Vec<f64>,
    /// Outer rounds `T_m`.
    pub outer_rounds: Vec<usize>,
    /// Inner rounds; `None` means 5 for DP and 10 for EO.
    pub inner_rounds: Option<usize>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub weight_set: WeightSet,
    pub seeds: Vec<u64>,
    pub split: [f64; 3],
    /// Attack radii for the robustness curves, ascending.
    pub eps_grid: Vec<f64>,
    pub out_dir: PathBuf,
    pub descent: DescentConfig,
    pub baseline: LogisticConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Planted(PlantedConfig::default()),
            notion: Notion::Dp,
            eps_fair: 0.05,
            budgets: steps(0.1, 0.1, 10),
            etas: steps(0.05, 0.05, 20),
            outer_rounds: (1..=20).map(|i| 100 * i).collect(),
            inner_rounds: None,
            gamma1: 0.05,
            gamma2: 0.1,
            weight_set: WeightSet::default(),
            seeds: (0..5).collect(),
            split: [0.64, 0.16, 0.20],
            eps_grid: steps(0.0, 0.1, 11),
            out_dir: PathBuf::from("results"),
            descent: DescentConfig::default(),
            baseline: LogisticConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config. Relative data and output paths are resolved
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data.rebase(base);
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn inner_rounds(&self) -> usize {
        self.inner_rounds.unwrap_or(match self.notion {
            Notion::Dp => 5,
            Notion::Eo => 10,
        })
    }

    pub fn grid(&self) -> Vec<TrainParams> {
        let mut out = Vec::new();
        for &budget in &self.budgets {
            for &eta_inner in &self.etas {
                for &outer_rounds in &self.outer_rounds {
                    out.push(TrainParams {
                        budget,
                        eta_inner,
                        outer_rounds,
                    });
                }
            }
        }
        out
    }

    pub fn meta_config(&self, p: &TrainParams) -> MetaConfig {
        MetaConfig {
            rounds: p.outer_rounds,
            eta_meta: None,
            weight_set: self.weight_set,
            inner: ApxFairConfig {
                notion: self.notion,
                eps_fair: self.eps_fair,
                gamma1: self.gamma1,
                gamma2: self.gamma2,
                budget: p.budget,
                rounds: self.inner_rounds(),
                eta_inner: Some(p.eta_inner),
                loss: Loss::Linear,
                descent: self.descent,
                weight_set: self.weight_set,
            },
            track_gap: false,
            record_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() || self.etas.is_empty() || self.outer_rounds.is_empty() {
            return Err(Error::Config(
                "hyperparameter grids must be nonempty".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.eps_grid.is_empty() {
            return Err(Error::Config("eps grid must be nonempty".into()));
        }
        if self.eps_grid.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::Config("eps grid must be ascending".into()));
        }
        if self.eps_grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::Config("eps grid values must lie in [0,1]".into()));
        }
        if self.inner_rounds == Some(0) {
            return Err(Error::Config("inner_rounds must be positive".into()));
        }
        crate::data::SplitSpec::new(0, self.split)?;
        for p in self.grid() {
            self.meta_config(&p).validate()?;
        }
        Ok(())
    }
}

/// Configuration of the `train` command: one fit on the full dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub data: DataSource,
    #[serde(default)]
    pub meta: MetaConfig,
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        cfg.data.rebase(path.parent().unwrap_or(Path::new("")));
        cfg.meta.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_match_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!(c.budgets.len(), 10);
        assert_eq!(c.budgets[2], 0.3);
        assert_eq!(c.etas.last(), Some(&1.0));
        assert_eq!(c.outer_rounds.last(), Some(&2000));
        assert_eq!(c.inner_rounds(), 5);
        let eo = ExperimentConfig {
            notion: Notion::Eo,
            ..c
        };
        assert_eq!(eo.inner_rounds(), 10);
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(
            parse_grid("0:1:0.25").unwrap(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(parse_grid("0:1:0.1").unwrap().len(), 11);
        assert_eq!(parse_grid("0.2,0.5").unwrap(), vec![0.2, 0.5]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let dup = ExperimentConfig {
            seeds: vec![1, 1],
            ..ExperimentConfig::default()
        };
        assert!(dup.validate().is_err());
        let empty = ExperimentConfig {
            budgets: vec![],
            ..ExperimentConfig::default()
        };
        assert!(empty.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn config_paths_are_rebased() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"data": {"kind": "csv", "path": "d.csv", "schema": {"label": "y", "protected": "a"}},
                "budgets": [0.5], "etas": [1.0], "outer_rounds": [2], "seeds": [3]}"#,
        )
        .unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        match &c.data {
            DataSource::Csv { path, .. } => assert_eq!(path, &dir.path().join("d.csv")),
            _ => panic!("expected csv source"),
        }
        assert_eq!(c.out_dir, dir.path().join("results"));
        assert_eq!(c.grid().len(), 1);
    }
}
