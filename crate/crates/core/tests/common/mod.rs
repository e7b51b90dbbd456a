//! Helpers shared by the integration tests. Every brute-force routine here
//! is written independently of the library code it checks.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use robustfair::data::{Dataset, Instance};
use robustfair::hypothesis::{Classifier, LinearHypothesis};
use robustfair::linprog::LinearProgram;
use robustfair::oracle::{fit_logistic, LogisticConfig};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Groups cycle through `0..groups` so each is present; labels are random
/// but both labels appear in every group when `both_labels` is set and
/// `n >= 2 * groups`.
pub fn random_dataset(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
    groups: usize,
    both_labels: bool,
) -> Dataset {
    let inst = (0..n)
        .map(|i| {
            let features: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
            let label = if both_labels && i < 2 * groups {
                u8::from(i >= groups)
            } else {
                u8::from(rng.gen::<f64>() < 0.5)
            };
            Instance {
                features,
                group: i % groups,
                label,
            }
        })
        .collect();
    Dataset::new(inst, groups).unwrap()
}

pub fn random_linear(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> LinearHypothesis {
    let coefficients = (0..dim).map(|_| scale * normal(rng)).collect();
    LinearHypothesis::new(coefficients, scale * normal(rng)).unwrap()
}

/// Rate of `probs` within each group under uniform weights.
pub fn group_means(probs: &[f64], d: &Dataset) -> Vec<f64> {
    let mut sum = vec![0.0; d.group_count()];
    let mut cnt = vec![0.0; d.group_count()];
    for (p, inst) in probs.iter().zip(d.instances()) {
        sum[inst.group] += p;
        cnt[inst.group] += 1.0;
    }
    sum.iter().zip(&cnt).map(|(s, c)| s / c).collect()
}

/// Logistic regression followed by per-group intercept shifts, found by
/// bisection, that equalize each group's mean prediction to the overall
/// mean. Demographic parity holds on the unweighted sample by construction.
pub fn fair_on_uniform(d: &Dataset) -> LinearHypothesis {
    let base = fit_logistic(d, &LogisticConfig::default()).unwrap();
    let probs = base.predict_probs(d).unwrap();
    let target = probs.iter().sum::<f64>() / probs.len() as f64;
    let scores: Vec<f64> = d
        .instances()
        .iter()
        .map(|i| base.score(i).unwrap())
        .collect();
    let mut shifts = Vec::new();
    for g in 0..d.group_count() {
        let member: Vec<f64> = scores
            .iter()
            .zip(d.instances())
            .filter(|(_, i)| i.group == g)
            .map(|(s, _)| *s)
            .collect();
        let mean_at = |b: f64| {
            member
                .iter()
                .map(|s| 1.0 / (1.0 + (-(s + b)).exp()))
                .sum::<f64>()
                / member.len() as f64
        };
        let (mut lo, mut hi) = (-20.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean_at(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        shifts.push(0.5 * (lo + hi));
    }
    LinearHypothesis::with_groups(base.coefficients.clone(), base.intercept, shifts).unwrap()
}

/// Solves `A_S x_S = r` by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut r: Vec<f64>) -> Option<Vec<f64>> {
    let m = r.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        r.swap(col, piv);
        for row in 0..m {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..m {
                    a[row][k] -= f * a[col][k];
                }
                r[row] -= f * r[col];
            }
        }
    }
    Some((0..m).map(|i| r[i] / a[i][i]).collect())
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = combinations(n - 1, k);
    for mut c in combinations(n - 1, k - 1) {
        c.push(n - 1);
        out.push(c);
    }
    out
}

/// Optimum of a bounded LP with full-row-rank constraints by enumerating
/// every basis and every lower/upper placement of the nonbasic variables.
/// `None` when no vertex is feasible.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.objective.len();
    let m = lp.constraints.len();
    let mut best: Option<f64> = None;
    for basis in combinations(n, m) {
        let nonbasic: Vec<usize> = (0..n).filter(|j| !basis.contains(j)).collect();
        for mask in 0u32..(1 << nonbasic.len()) {
            let mut x = vec![0.0; n];
            for (k, &j) in nonbasic.iter().enumerate() {
                x[j] = if mask >> k & 1 == 1 {
                    lp.bounds[j].1
                } else {
                    lp.bounds[j].0
                };
            }
            let a: Vec<Vec<f64>> = lp
                .constraints
                .iter()
                .map(|c| basis.iter().map(|&j| c.coefficients[j]).collect())
                .collect();
            let r: Vec<f64> = lp
                .constraints
                .iter()
                .map(|c| {
                    c.rhs
                        - nonbasic
                            .iter()
                            .map(|&j| c.coefficients[j] * x[j])
                            .sum::<f64>()
                })
                .collect();
            let Some(xb) = solve_square(a, r) else {
                continue;
            };
            for (&j, v) in basis.iter().zip(xb) {
                x[j] = v;
            }
            let feasible = x
                .iter()
                .zip(&lp.bounds)
                .all(|(v, (lo, hi))| *v >= lo - 1e-9 && *v <= hi + 1e-9);
            if feasible {
                let val: f64 = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
                best = Some(best.map_or(val, |b: f64| b.max(val)));
            }
        }
    }
    best
}

/// Random feasible LP with finite bounds: `b = A x0` for a point `x0`
/// inside the box.
pub fn random_lp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LinearProgram {
    let objective = (0..n).map(|_| normal(rng)).collect();
    let bounds: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let lo = rng.gen_range(-2.0..1.0);
            (lo, lo + rng.gen_range(0.5..3.0))
        })
        .collect();
    let x0: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| rng.gen_range(lo..hi))
        .collect();
    let mut lp = LinearProgram::new(objective).with_bounds(bounds);
    for _ in 0..m {
        let row: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        let rhs = row.iter().zip(&x0).map(|(a, x)| a * x).sum();
        lp = lp.equality(row, rhs);
    }
    lp
}

/// Lagrangian dual value at multipliers `y`: an upper bound on the primal
/// maximum for any `y`, tight at optimal multipliers.
pub fn dual_value(lp: &LinearProgram, y: &[f64]) -> f64 {
    let mut val: f64 = lp.constraints.iter().zip(y).map(|(c, yi)| c.rhs * yi).sum();
    for j in 0..lp.objective.len() {
        let reduced = lp.objective[j]
            - lp.constraints
                .iter()
                .zip(y)
                .map(|(c, yi)| c.coefficients[j] * yi)
                .sum::<f64>();
        let (lo, hi) = lp.bounds[j];
        val += if reduced > 0.0 {
            reduced * hi
        } else {
            reduced * lo
        };
    }
    val
}
