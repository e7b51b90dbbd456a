//! Labeled instances with a protected attribute, CSV ingestion and seeded
//! train/validation/test splits.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub mod synthetic;

/// One training example `((x, a), y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub features: Vec<f64>,
    pub group: usize,
    pub label: u8,
}

/// A nonempty, validated collection of instances.
///
/// Every group id in `0..group_count` occurs at least once and all feature
/// vectors share one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: Vec<Instance>,
    group_count: usize,
    feature_dim: usize,
    group_names: Vec<String>,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, group_count: usize) -> Result<Self> {
        let names = (0..group_count).map(|g| g.to_string()).collect();
        Self::with_group_names(instances, names)
    }

    pub fn with_group_names(instances: Vec<Instance>, group_names: Vec<String>) -> Result<Self> {
        let group_count = group_names.len();
        let first = instances.first().ok_or(Error::EmptyDataset)?;
        let feature_dim = first.features.len();
        if group_count == 0 {
            return Err(Error::InvalidDataset("group_count must be positive".into()));
        }
        let mut seen = vec![false; group_count];
        for (i, inst) in instances.iter().enumerate() {
            if inst.features.len() != feature_dim {
                return Err(Error::InvalidDataset(format!(
                    "instance {i} has {} features, expected {feature_dim}",
                    inst.features.len()
                )));
            }
            if let Some(j) = inst.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "instance {i} has a non-finite feature at position {j}"
                )));
            }
            if inst.group >= group_count {
                return Err(Error::InvalidDataset(format!(
                    "instance {i} has group {} but only {group_count} groups exist",
                    inst.group
                )));
            }
            if inst.label > 1 {
                return Err(Error::InvalidDataset(format!(
                    "instance {i} has label {}, expected 0 or 1",
                    inst.label
                )));
            }
            seen[inst.group] = true;
        }
        if let Some(g) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(format!(
                "group {g} (`{}`) has no instances",
                group_names[g]
            )));
        }
        Ok(Self {
            instances,
            group_count,
            feature_dim,
            group_names,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Original protected-attribute value for each group id.
    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn groups(&self) -> impl Iterator<Item = usize> + '_ {
        self.instances.iter().map(|i| i.group)
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.instances.iter().map(|i| i.label)
    }

    /// Number of instances per group.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.group_count];
        for g in self.groups() {
            sizes[g] += 1;
        }
        sizes
    }

    /// Dataset restricted to `indices`, in the given order. Group encoding is
    /// kept, so every group must still be represented.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut instances = Vec::with_capacity(indices.len());
        for &i in indices {
            let inst = self.instances.get(i).ok_or_else(|| {
                Error::InvalidDataset(format!("index {i} out of range for {} rows", self.len()))
            })?;
            instances.push(inst.clone());
        }
        Dataset::with_group_names(instances, self.group_names.clone())
    }
}

/// Column roles for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    /// Binary label column (values 0/1).
    pub label: String,
    /// Protected attribute column; any string values.
    pub protected: String,
    /// Fixed encoding of protected values to group ids. When absent, ids are
    /// assigned in order of first appearance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_values: Option<Vec<String>>,
    /// Extra columns to skip (ids, free text).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ignore: Vec<String>,
}

impl Schema {
    pub fn new(label: impl Into<String>, protected: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            protected: protected.into(),
            group_values: None,
            ignore: Vec::new(),
        }
    }

    /// Same column roles with the group encoding pinned to that of `d`.
    pub fn pinned_to(&self, d: &Dataset) -> Self {
        Self {
            group_values: Some(d.group_names().to_vec()),
            ..self.clone()
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Reads a headered, comma-separated table. Row indices in errors are
/// zero-based over data rows (the header is not counted).
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        let hits: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.trim() == name)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [i] => Ok(*i),
            [] => Err(Error::Schema(format!("missing column `{name}`"))),
            _ => Err(Error::Schema(format!(
                "column `{name}` appears more than once"
            ))),
        }
    };
    let label_col = find(&schema.label)?;
    let prot_col = find(&schema.protected)?;
    if label_col == prot_col {
        return Err(Error::Schema(
            "label and protected columns must differ".into(),
        ));
    }
    for name in &schema.ignore {
        find(name)?;
    }
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_col && c != prot_col)
        .filter(|&c| !schema.ignore.iter().any(|n| n == headers[c].trim()))
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns left".into()));
    }

    let mut names: Vec<String> = schema.group_values.clone().unwrap_or_default();
    let pinned = schema.group_values.is_some();
    let mut ids: HashMap<String, usize> = names
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), i))
        .collect();

    let mut instances = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let raw_label = record[label_col].trim();
        let label = match raw_label.parse::<f64>() {
            Ok(0.0) => 0,
            Ok(1.0) => 1,
            _ => {
                return Err(Error::Parse {
                    row,
                    column: schema.label.clone(),
                    message: format!("label `{raw_label}` is not 0 or 1"),
                })
            }
        };
        let prot = record[prot_col].trim();
        if prot.is_empty() {
            return Err(Error::Parse {
                row,
                column: schema.protected.clone(),
                message: "missing protected value".into(),
            });
        }
        let group = match ids.get(prot) {
            Some(&g) => g,
            None if pinned => {
                return Err(Error::Parse {
                    row,
                    column: schema.protected.clone(),
                    message: format!("protected value `{prot}` not in group_values"),
                })
            }
            None => {
                let g = names.len();
                names.push(prot.to_string());
                ids.insert(prot.to_string(), g);
                g
            }
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let cell = record[c].trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: headers[c].to_string(),
                message: format!("`{cell}` is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[c].to_string(),
                    message: format!("`{cell}` is not finite"),
                });
            }
            features.push(v);
        }
        instances.push(Instance {
            features,
            group,
            label,
        });
    }
    if instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::with_group_names(instances, names)
}

/// Writes `d` as CSV with feature columns `x0..`, then `protected`, `label`.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = (0..d.feature_dim()).map(|j| format!("x{j}")).collect();
    header.push("protected".into());
    header.push("label".into());
    w.write_record(&header)?;
    for inst in d.instances() {
        let mut rec: Vec<String> = inst.features.iter().map(|v| v.to_string()).collect();
        rec.push(d.group_names()[inst.group].clone());
        rec.push(inst.label.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Seed and (train, validation, test) fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub fractions: [f64; 3],
}

impl SplitSpec {
    pub fn new(seed: u64, fractions: [f64; 3]) -> Result<Self> {
        let spec = Self { seed, fractions };
        spec.validate()?;
        Ok(spec)
    }

    /// 64/16/20, i.e. an 80/20 train-test split with 20% of train held out.
    pub fn standard(seed: u64) -> Self {
        Self {
            seed,
            fractions: [0.64, 0.16, 0.20],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Split(format!(
                "fractions must lie in (0,1), got {:?}",
                self.fractions
            )));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Shuffled index partition: train gets `floor(f_train * n)`, validation
/// `floor(f_val * n)`, test the remainder.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    let n_train = (spec.fractions[0] * n as f64).floor() as usize;
    let n_val = (spec.fractions[1] * n as f64).floor() as usize;
    let n_test = n.saturating_sub(n_train + n_val);
    for (name, size) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if size == 0 {
            return Err(Error::Split(format!(
                "{name} part would be empty for n={n}"
            )));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok([order, val, test])
}

pub fn split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let [train, val, test] = split_indices(d.len(), spec)?;
    let part = |idx: &[usize], name: &str| {
        d.subset(idx)
            .map_err(|e| Error::Split(format!("{name} part is invalid: {e}")))
    };
    Ok((
        part(&train, "train")?,
        part(&val, "validation")?,
        part(&test, "test")?,
    ))
}
