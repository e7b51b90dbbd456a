//! Weight-set projections, bucket discretization of weights, and the grid of
//! group marginals searched by the adversary.

use serde::{Deserialize, Serialize};

use crate::metrics::WeightVector;
use crate::{Error, Result};

/// Feasible reweightings of an `n`-point sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSet {
    /// Every point of the probability simplex.
    Simplex,
    /// Simplex points with `w_i` in `[(1-radius)/n, (1+radius)/n]`.
    Box { radius: f64 },
}

impl Default for WeightSet {
    fn default() -> Self {
        WeightSet::Box { radius: 0.5 }
    }
}

impl WeightSet {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightSet::Simplex => Ok(()),
            WeightSet::Box { radius } if (0.0..=1.0).contains(&radius) => Ok(()),
            WeightSet::Box { radius } => Err(Error::Config(format!(
                "box radius must lie in [0,1], got {radius}"
            ))),
        }
    }

    /// Per-coordinate bounds for `n` instances.
    pub fn bounds(&self, n: usize) -> (f64, f64) {
        match *self {
            WeightSet::Simplex => (0.0, 1.0),
            WeightSet::Box { radius } => {
                let n = n as f64;
                ((1.0 - radius) / n, (1.0 + radius) / n)
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, v: &[f64]) -> Result<WeightVector> {
        self.validate()?;
        match *self {
            WeightSet::Simplex => project_simplex(v),
            WeightSet::Box { .. } => {
                let (lo, hi) = self.bounds(v.len());
                project_capped_simplex(v, lo, hi)
            }
        }
    }

    pub fn contains(&self, w: &[f64], tol: f64) -> bool {
        let (lo, hi) = self.bounds(w.len());
        let total: f64 = w.iter().sum();
        (total - 1.0).abs() <= tol && w.iter().all(|&x| x >= lo - tol && x <= hi + tol)
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidWeights(
            "cannot project an empty vector".into(),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidWeights(
            "cannot project a non-finite vector".into(),
        ));
    }
    Ok(())
}

/// Projection onto the probability simplex by sorting and thresholding:
/// `w_i = max(v_i - theta, 0)`.
pub fn project_simplex(v: &[f64]) -> Result<WeightVector> {
    check_finite(v)?;
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let w: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    WeightVector::new(fix_sum(w))
}

/// Projection onto `{w : sum w = 1, lo <= w_i <= hi}`, the simplex
/// intersected with a box. The minimizer is `clamp(v_i - theta, lo, hi)`;
/// theta is bracketed by bisection and then solved exactly on the free set.
pub fn project_capped_simplex(v: &[f64], lo: f64, hi: f64) -> Result<WeightVector> {
    check_finite(v)?;
    let n = v.len() as f64;
    if !(lo >= 0.0 && lo <= hi && lo * n <= 1.0 + 1e-12 && hi * n >= 1.0 - 1e-12) {
        return Err(Error::InvalidWeights(format!(
            "box [{lo}, {hi}] does not intersect the simplex for n={}",
            v.len()
        )));
    }
    if hi - lo <= f64::EPSILON * hi.max(1.0) {
        return WeightVector::uniform(v.len());
    }
    let mass = |theta: f64| -> f64 { v.iter().map(|&x| (x - theta).clamp(lo, hi)).sum() };
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    // mass(a) = n*hi >= 1 and mass(b) = n*lo <= 1
    let (mut a, mut b) = (vmin - hi, vmax - lo);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mass(mid) > 1.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
    }
    let mut theta = 0.5 * (a + b);
    // exact solve with clamped coordinates held fixed
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut fixed = 0.0;
    for &x in v {
        let y = x - theta;
        if y <= lo {
            fixed += lo;
        } else if y >= hi {
            fixed += hi;
        } else {
            free_sum += x;
            free += 1;
        }
    }
    if free > 0 {
        let exact = (free_sum - (1.0 - fixed)) / free as f64;
        let consistent = v.iter().all(|&x| {
            let before = x - theta;
            let after = x - exact;
            (before <= lo) == (after <= lo) && (before >= hi) == (after >= hi)
        });
        if consistent {
            theta = exact;
        }
    }
    let w: Vec<f64> = v.iter().map(|&x| (x - theta).clamp(lo, hi)).collect();
    WeightVector::new(fix_sum(w))
}

/// Removes floating-point drift from a vector that sums to 1 up to rounding
/// by rescaling; entries keep their sign.
fn fix_sum(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if total > 0.0 && (total - 1.0).abs() > 1e-15 {
        for x in &mut w {
            *x /= total;
        }
    }
    w
}

/// Rescales a nonnegative vector to sum to 1.
pub fn normalize(w: &[f64]) -> Result<WeightVector> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidWeights(format!(
            "cannot normalize a vector summing to {total}"
        )));
    }
    WeightVector::new(w.iter().map(|x| x / total).collect())
}

/// Geometric buckets `[0, d), [d, (1+g)d), [(1+g)d, (1+g)^2 d), ...` with
/// floor `d = g / (2n)`; a weight is rounded up to its bucket's upper end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketScheme {
    gamma1: f64,
    delta: f64,
    bucket_count: usize,
}

impl BucketScheme {
    pub fn new(gamma1: f64, n: usize) -> Result<Self> {
        if !(gamma1 > 0.0 && gamma1.is_finite()) {
            return Err(Error::Config(format!(
                "gamma1 must be positive, got {gamma1}"
            )));
        }
        if n == 0 {
            return Err(Error::Config("bucket scheme needs n >= 1".into()));
        }
        let delta = gamma1 / (2.0 * n as f64);
        if delta >= 1.0 {
            return Err(Error::Config(format!(
                "bucket floor gamma1/(2n) = {delta} must be below 1"
            )));
        }
        let ratio = 1.0 + gamma1;
        let mut m = ((1.0 / delta).ln() / ratio.ln()).ceil().max(1.0) as usize;
        while delta * ratio.powi(m as i32) < 1.0 {
            m += 1;
        }
        while m > 1 && delta * ratio.powi(m as i32 - 1) >= 1.0 {
            m -= 1;
        }
        Ok(Self {
            gamma1,
            delta,
            bucket_count: m,
        })
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    /// Floor value `gamma1 / (2n)`; every discretized weight is at least this.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_count
    }

    /// Upper end of bucket `k`: `delta` for `k = 0`, else `(1+g)^k delta`.
    pub fn upper_endpoint(&self, k: usize) -> f64 {
        self.delta * (1.0 + self.gamma1).powi(k as i32)
    }

    /// Upper endpoints of buckets `0..=bucket_count`; strictly increasing,
    /// the last at least 1.
    pub fn endpoints(&self) -> Vec<f64> {
        (0..=self.bucket_count)
            .map(|k| self.upper_endpoint(k))
            .collect()
    }

    /// Index of the bucket containing `x >= 0`.
    pub fn bucket_of(&self, x: f64) -> usize {
        if x < self.delta {
            return 0;
        }
        let ratio = 1.0 + self.gamma1;
        let mut k = ((x / self.delta).ln() / ratio.ln()).floor().max(0.0) as usize + 1;
        // enforce upper(k-1) <= x < upper(k) despite rounding in the logs
        while x >= self.upper_endpoint(k) {
            k += 1;
        }
        while k > 1 && x < self.upper_endpoint(k - 1) {
            k -= 1;
        }
        k
    }

    pub fn discretize_value(&self, x: f64) -> f64 {
        self.upper_endpoint(self.bucket_of(x))
    }

    /// Coordinatewise rounding up to bucket endpoints. The result is not
    /// normalized.
    pub fn discretize(&self, w: &[f64]) -> Vec<f64> {
        w.iter().map(|&x| self.discretize_value(x)).collect()
    }
}

/// Grid of group-marginal tuples: coordinates from
/// `{(1+g2)^j * dm : j = 0..=M}` with `dm = (1+g2) g1 / n`, tuples capped at
/// total `1 + g2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalGrid {
    gamma2: f64,
    delta_m: f64,
    groups: usize,
    points: Vec<f64>,
}

impl MarginalGrid {
    pub fn new(gamma1: f64, gamma2: f64, n: usize, groups: usize) -> Result<Self> {
        if !(gamma1 > 0.0 && gamma2 > 0.0 && gamma1.is_finite() && gamma2.is_finite()) {
            return Err(Error::Config(format!(
                "gamma1 and gamma2 must be positive, got {gamma1} and {gamma2}"
            )));
        }
        if groups < 2 {
            return Err(Error::Config(
                "marginal grid needs at least two groups".into(),
            ));
        }
        if n == 0 {
            return Err(Error::Config("marginal grid needs n >= 1".into()));
        }
        let ratio = 1.0 + gamma2;
        let delta_m = ratio * gamma1 / n as f64;
        let cap = ratio;
        let mut points = Vec::new();
        let mut p = delta_m;
        // points beyond the cap can never appear in a retained tuple
        while p <= cap * (1.0 + 1e-12) {
            points.push(p);
            p *= ratio;
            if points.len() > 1_000_000 {
                return Err(Error::Config("marginal grid too fine".into()));
            }
        }
        let grid = Self {
            gamma2,
            delta_m,
            groups,
            points,
        };
        if grid.points.is_empty() || grid.delta_m * groups as f64 > cap * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "marginal grid is empty: {groups} groups at minimum marginal {delta_m} exceed cap {cap}"
            )));
        }
        Ok(grid)
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn delta_m(&self) -> f64 {
        self.delta_m
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Sum cap `1 + gamma2` on retained tuples.
    pub fn cap(&self) -> f64 {
        1.0 + self.gamma2
    }

    /// Positive coordinate values in increasing order.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn within_cap(&self, total: f64) -> bool {
        total <= self.cap() * (1.0 + 1e-12)
    }

    /// Every retained tuple, in lexicographic order of coordinate indices.
    pub fn enumerate(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut idx = vec![0usize; self.groups];
        self.recurse(0, 0.0, &mut idx, &mut out);
        out
    }

    fn recurse(&self, pos: usize, partial: f64, idx: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if pos == self.groups {
            out.push(idx.iter().map(|&j| self.points[j]).collect());
            return;
        }
        let remaining = (self.groups - pos - 1) as f64 * self.delta_m;
        for j in 0..self.points.len() {
            let total = partial + self.points[j];
            // points are increasing, so later indices only grow the sum
            if !self.within_cap(total + remaining) {
                break;
            }
            idx[pos] = j;
            self.recurse(pos + 1, total, idx, out);
        }
    }
}
