use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::experiment::ResultRow;
use crate::metrics::Notion;
use crate::{Error, Result};

/// Frozen column layouts shared with the plotting scripts.
pub const CURVE_HEADER: [&str; 5] = ["method", "notion", "eps", "mean_violation", "stderr"];
pub const TRADEOFF_HEADER: [&str; 6] = [
    "method",
    "notion",
    "accuracy",
    "acc_stderr",
    "violation",
    "viol_stderr",
];
pub const RESULTS_HEADER: [&str; 6] = ["method", "seed", "notion", "eps", "accuracy", "violation"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub method: String,
    pub notion: Notion,
    pub eps: f64,
    pub mean_violation: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub method: String,
    pub notion: Notion,
    pub accuracy: f64,
    pub acc_stderr: f64,
    pub violation: f64,
    pub viol_stderr: f64,
}

/// Mean and standard error (sample deviation over `sqrt(k)`, zero for a
/// single value).
fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Key with a total order on the float radius.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct EpsKey(u64);

impl EpsKey {
    fn new(eps: f64) -> Self {
        // non-negative floats order like their bit patterns
        Self((eps + 0.0).to_bits())
    }

    fn get(&self) -> f64 {
        f64::from_bits(self.0)
    }
}

type Series = BTreeMap<(Notion, String), BTreeMap<EpsKey, Vec<f64>>>;

fn collect(rows: &[ResultRow]) -> Result<Series> {
    let mut out: Series = BTreeMap::new();
    for r in rows {
        if r.eps.is_nan() || r.eps < 0.0 {
            return Err(Error::Config(format!("row has invalid eps {}", r.eps)));
        }
        out.entry((r.notion, r.method.clone()))
            .or_default()
            .entry(EpsKey::new(r.eps))
            .or_default()
            .push(r.violation);
    }
    Ok(out)
}

pub(crate) fn curve_points(rows: &[ResultRow]) -> Result<Vec<CurvePoint>> {
    let mut pts = Vec::new();
    for ((notion, method), by_eps) in collect(rows)? {
        for (eps, vals) in by_eps {
            let (mean, se) = mean_stderr(&vals);
            pts.push(CurvePoint {
                method: method.clone(),
                notion,
                eps: eps.get(),
                mean_violation: mean,
                stderr: se,
            });
        }
    }
    Ok(pts)
}

/// Accuracy against unweighted violation, taken at the smallest radius
/// present (zero in the default grid). One accuracy per seed.
pub(crate) fn tradeoff_points(rows: &[ResultRow]) -> Result<Vec<TradeoffPoint>> {
    let mut groups: BTreeMap<(Notion, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.notion, r.method.clone()))
            .or_default()
            .push(r);
    }
    let mut pts = Vec::new();
    for ((notion, method), rs) in groups {
        let min_eps = rs.iter().map(|r| r.eps).fold(f64::INFINITY, f64::min);
        let mut per_seed: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for r in rs.iter().filter(|r| r.eps == min_eps) {
            per_seed.insert(r.seed, (r.accuracy, r.violation));
        }
        let accs: Vec<f64> = per_seed.values().map(|v| v.0).collect();
        let viols: Vec<f64> = per_seed.values().map(|v| v.1).collect();
        let (accuracy, acc_stderr) = mean_stderr(&accs);
        let (violation, viol_stderr) = mean_stderr(&viols);
        pts.push(TradeoffPoint {
            method,
            notion,
            accuracy,
            acc_stderr,
            violation,
            viol_stderr,
        });
    }
    Ok(pts)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    use std::io::Write;
    w.flush().map_err(|e| Error::io(path, e))?;
    let mut file = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    file.flush().map_err(|e| Error::io(path, e))
}

/// Writes `curve_{notion}_{method}.csv` per series, `tradeoff.csv` and the
/// raw `results.csv`. Returns the paths in write order.
pub fn emit_curves(rows: &[ResultRow], out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = out.as_ref();
    if rows.is_empty() {
        return Err(Error::Config("no result rows to emit".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();

    let points = curve_points(rows)?;
    let mut series: BTreeMap<(Notion, &str), Vec<&CurvePoint>> = BTreeMap::new();
    for p in &points {
        series
            .entry((p.notion, p.method.as_str()))
            .or_default()
            .push(p);
    }
    for ((notion, method), pts) in series {
        let path = out.join(format!("curve_{}_{}.csv", notion.as_str(), method));
        let mut w = writer(&path)?;
        w.write_record(CURVE_HEADER)?;
        for p in pts {
            w.serialize(p)?;
        }
        finish(w, &path)?;
        written.push(path);
    }

    let path = out.join("tradeoff.csv");
    let mut w = writer(&path)?;
    w.write_record(TRADEOFF_HEADER)?;
    for p in tradeoff_points(rows)? {
        w.serialize(p)?;
    }
    finish(w, &path)?;
    written.push(path);

    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.method, a.seed, a.notion)
            .cmp(&(&b.method, b.seed, b.notion))
            .then(a.eps.total_cmp(&b.eps))
    });
    let path = out.join("results.csv");
    let mut w = writer(&path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in sorted {
        w.serialize(r)?;
    }
    finish(w, &path)?;
    written.push(path);
    Ok(written)
}
