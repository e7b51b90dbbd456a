//! Dense bounded-variable simplex for small equality-constrained LPs.
//!
//! Problems have the form
//!
//! ```text
//! maximize  c.x   subject to  A x = b,  lo <= x <= hi
//! ```
//!
//! with finite `lo` and possibly infinite `hi`. Nonbasic variables sit at
//! one of their bounds, so box constraints cost no extra rows. Phase 1 adds
//! one artificial variable per row. Pricing uses the largest reduced cost
//! and falls back to Bland's smallest-index rule after a run of degenerate
//! pivots, which rules out cycling.

use crate::{Error, Result};

/// Smallest magnitude accepted as a pivot element.
pub const PIVOT_TOL: f64 = 1e-9;
/// Constraint and bound violation accepted in a returned point.
pub const FEASIBILITY_TOL: f64 = 1e-7;
const OPTIMALITY_TOL: f64 = 1e-9;
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    /// Maximized.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    /// `(lo, hi)` per variable; `hi` may be `f64::INFINITY`.
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// Program with no constraints and bounds `[0, inf)`.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            constraints: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n],
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn equality(mut self, coefficients: Vec<f64>, rhs: f64) -> Self {
        self.constraints.push(Constraint { coefficients, rhs });
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.objective.len();
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidLp("objective has non-finite entries".into()));
        }
        if self.bounds.len() != n {
            return Err(Error::InvalidLp(format!(
                "{} bounds for {n} variables",
                self.bounds.len()
            )));
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !lo.is_finite() || hi.is_nan() || hi == f64::NEG_INFINITY || lo > hi {
                return Err(Error::InvalidLp(format!(
                    "variable {j} has bounds [{lo}, {hi}]"
                )));
            }
        }
        for (r, c) in self.constraints.iter().enumerate() {
            if c.coefficients.len() != n {
                return Err(Error::InvalidLp(format!(
                    "constraint {r} has {} coefficients for {n} variables",
                    c.coefficients.len()
                )));
            }
            if !c.rhs.is_finite() || c.coefficients.iter().any(|a| !a.is_finite()) {
                return Err(Error::InvalidLp(format!(
                    "constraint {r} has non-finite entries"
                )));
            }
        }
        Ok(())
    }

    /// Largest bound or equality violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (&xj, &(lo, hi)) in x.iter().zip(&self.bounds) {
            worst = worst.max(lo - xj).max(xj - hi);
        }
        for c in &self.constraints {
            let lhs: f64 = c.coefficients.iter().zip(x).map(|(a, x)| a * x).sum();
            worst = worst.max((lhs - c.rhs).abs());
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solver output. `point` and `duals` are empty and `value` is NaN unless
/// the status is optimal.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub point: Vec<f64>,
    pub value: f64,
    /// One multiplier per equality constraint.
    pub duals: Vec<f64>,
}

impl LpSolution {
    fn without_point(status: LpStatus) -> Self {
        Self {
            status,
            point: Vec::new(),
            value: f64::NAN,
            duals: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves `lp`. Infeasibility and unboundedness are reported through the
/// status; errors are reserved for malformed input and numerical breakdown.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();
    let m = lp.constraints.len();

    // shift x = lo + x' and flip rows so that the rhs is nonnegative
    let mut a = vec![0.0; m * n];
    let mut b = vec![0.0; m];
    let mut sign = vec![1.0; m];
    for (r, c) in lp.constraints.iter().enumerate() {
        let shift: f64 = c
            .coefficients
            .iter()
            .zip(&lp.bounds)
            .map(|(a, (lo, _))| a * lo)
            .sum();
        let mut rhs = c.rhs - shift;
        if rhs < 0.0 {
            sign[r] = -1.0;
            rhs = -rhs;
        }
        b[r] = rhs;
        for j in 0..n {
            a[r * n + j] = sign[r] * c.coefficients[j];
        }
    }
    let mut upper: Vec<f64> = lp.bounds.iter().map(|(lo, hi)| hi - lo).collect();
    upper.extend(std::iter::repeat_n(f64::INFINITY, m));

    let mut tab = Tableau::new(&a, &b, n, m, upper);

    // phase 1: maximize -sum(artificials)
    let mut cost = vec![0.0; n + m];
    for c in cost.iter_mut().skip(n) {
        *c = -1.0;
    }
    tab.set_cost(cost);
    let cap = 50 * (n + m) + 1000;
    tab.run(cap)?;
    let infeasibility: f64 = (0..m)
        .filter(|&r| tab.basis[r] >= n)
        .map(|r| tab.beta[r].max(0.0))
        .sum();
    let scale = b.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    if infeasibility > FEASIBILITY_TOL * scale {
        return Ok(LpSolution::without_point(LpStatus::Infeasible));
    }
    tab.expel_artificials(n);

    // phase 2
    let mut cost = vec![0.0; n + m];
    cost[..n].copy_from_slice(&lp.objective);
    tab.set_cost(cost);
    if tab.run(cap)? == Outcome::Unbounded {
        return Ok(LpSolution::without_point(LpStatus::Unbounded));
    }
    tab.polish(&a, &b, n);

    let mut point = vec![0.0; n];
    for j in 0..n {
        let shifted = tab.value_of(j);
        let (lo, hi) = lp.bounds[j];
        point[j] = (lo + shifted).clamp(lo, hi);
    }
    let duals = tab
        .duals(&a, n)
        .map(|y| y.iter().zip(&sign).map(|(y, s)| y * s).collect())
        .unwrap_or_default();
    let value = lp.objective_value(&point);
    let solution = LpSolution {
        status: LpStatus::Optimal,
        point,
        value,
        duals,
    };
    if cfg!(debug_assertions) {
        let bscale = lp
            .constraints
            .iter()
            .fold(1.0f64, |acc, c| acc.max(c.rhs.abs()));
        let violation = lp.max_violation(&solution.point);
        if violation > FEASIBILITY_TOL * bscale {
            return Err(Error::Internal(format!(
                "simplex returned a point violating constraints by {violation}"
            )));
        }
    }
    Ok(solution)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Optimal,
    Unbounded,
}

/// Dense tableau `B^-1 [A | I]` over shifted variables `0 <= x' <= upper`.
struct Tableau {
    m: usize,
    cols: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    upper: Vec<f64>,
    at_upper: Vec<bool>,
    is_basic: Vec<bool>,
    cost: Vec<f64>,
    reduced: Vec<f64>,
}

impl Tableau {
    fn new(a: &[f64], b: &[f64], n: usize, m: usize, upper: Vec<f64>) -> Self {
        let cols = n + m;
        let mut t = vec![0.0; m * cols];
        for r in 0..m {
            t[r * cols..r * cols + n].copy_from_slice(&a[r * n..(r + 1) * n]);
            t[r * cols + n + r] = 1.0;
        }
        let mut is_basic = vec![false; cols];
        for flag in is_basic.iter_mut().skip(n) {
            *flag = true;
        }
        Self {
            m,
            cols,
            t,
            beta: b.to_vec(),
            basis: (n..n + m).collect(),
            upper,
            at_upper: vec![false; cols],
            is_basic,
            cost: vec![0.0; cols],
            reduced: vec![0.0; cols],
        }
    }

    fn set_cost(&mut self, cost: Vec<f64>) {
        self.cost = cost;
        for j in 0..self.cols {
            let mut d = self.cost[j];
            for r in 0..self.m {
                d -= self.cost[self.basis[r]] * self.t[r * self.cols + j];
            }
            self.reduced[j] = if self.is_basic[j] { 0.0 } else { d };
        }
    }

    fn value_of(&self, j: usize) -> f64 {
        if self.is_basic[j] {
            let r = self
                .basis
                .iter()
                .position(|&b| b == j)
                .expect("basic variable has a row");
            self.beta[r]
        } else if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn improving(&self, j: usize) -> bool {
        if self.is_basic[j] || self.upper[j] <= 0.0 {
            return false;
        }
        let d = self.reduced[j];
        if self.at_upper[j] {
            d < -OPTIMALITY_TOL
        } else {
            d > OPTIMALITY_TOL
        }
    }

    fn run(&mut self, cap: usize) -> Result<Outcome> {
        let mut bland = false;
        let mut streak = 0;
        for _ in 0..cap {
            let entering = if bland {
                (0..self.cols).find(|&j| self.improving(j))
            } else {
                (0..self.cols)
                    .filter(|&j| self.improving(j))
                    .max_by(|&i, &j| {
                        self.reduced[i]
                            .abs()
                            .total_cmp(&self.reduced[j].abs())
                            .then(j.cmp(&i))
                    })
            };
            let Some(j) = entering else {
                return Ok(Outcome::Optimal);
            };
            let step = self.step(j)?;
            match step {
                None => return Ok(Outcome::Unbounded),
                Some(t) if t <= 1e-12 => {
                    streak += 1;
                    if streak >= DEGENERATE_STREAK {
                        bland = true;
                    }
                }
                Some(_) => streak = 0,
            }
        }
        Err(Error::Numeric(format!("simplex exceeded {cap} iterations")))
    }

    /// Moves nonbasic `j` off its bound as far as feasibility allows.
    /// Returns the step length, or `None` when the ray is unbounded.
    fn step(&mut self, j: usize) -> Result<Option<f64>> {
        let cols = self.cols;
        let dir = if self.at_upper[j] { -1.0 } else { 1.0 };
        let mut best = self.upper[j];
        // leaving row; None means j flips to its opposite bound
        let mut leaving: Option<usize> = None;
        let mut leaving_index = j;
        for r in 0..self.m {
            let alpha = dir * self.t[r * cols + j];
            let basic = self.basis[r];
            let limit = if alpha > PIVOT_TOL {
                self.beta[r].max(0.0) / alpha
            } else if alpha < -PIVOT_TOL && self.upper[basic].is_finite() {
                (self.upper[basic] - self.beta[r]).max(0.0) / -alpha
            } else {
                continue;
            };
            let tie = (limit - best).abs() <= 1e-12 * (1.0 + best.abs().min(1e12));
            if limit < best && !tie || (tie && basic < leaving_index) {
                best = limit;
                leaving = Some(r);
                leaving_index = basic;
            }
        }
        if best.is_infinite() {
            return Ok(None);
        }
        let t = best;
        for r in 0..self.m {
            self.beta[r] -= dir * t * self.t[r * cols + j];
        }
        match leaving {
            None => self.at_upper[j] = !self.at_upper[j],
            Some(r) => {
                let out = self.basis[r];
                let alpha = dir * self.t[r * cols + j];
                let entering_value = if dir > 0.0 { t } else { self.upper[j] - t };
                self.pivot(r, j);
                self.beta[r] = entering_value;
                self.at_upper[out] = alpha < 0.0;
            }
        }
        if !t.is_finite() {
            return Err(Error::Numeric("non-finite simplex step".into()));
        }
        Ok(Some(t))
    }

    /// Basis exchange: `j` enters at row `r`. Does not touch `beta`.
    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let piv = self.t[r * cols + j];
        for k in 0..cols {
            self.t[r * cols + k] /= piv;
        }
        let (before, rest) = self.t.split_at_mut(r * cols);
        let (row, after) = rest.split_at_mut(cols);
        for other in before.chunks_mut(cols).chain(after.chunks_mut(cols)) {
            let f = other[j];
            if f != 0.0 {
                for k in 0..cols {
                    other[k] -= f * row[k];
                }
            }
        }
        let f = self.reduced[j];
        if f != 0.0 {
            for k in 0..cols {
                self.reduced[k] -= f * row[k];
            }
        }
        let out = self.basis[r];
        self.is_basic[out] = false;
        self.is_basic[j] = true;
        self.at_upper[j] = false;
        self.basis[r] = j;
        self.reduced[j] = 0.0;
    }

    /// After phase 1: pivots basic artificials out where possible and pins
    /// all artificials to zero.
    fn expel_artificials(&mut self, n: usize) {
        let cols = self.cols;
        for r in 0..self.m {
            if self.basis[r] < n {
                continue;
            }
            let candidate = (0..n)
                .filter(|&j| !self.is_basic[j])
                .filter(|&j| self.t[r * cols + j].abs() > PIVOT_TOL)
                .max_by(|&i, &j| {
                    self.t[r * cols + i]
                        .abs()
                        .total_cmp(&self.t[r * cols + j].abs())
                        .then(j.cmp(&i))
                });
            if let Some(j) = candidate {
                let value = if self.at_upper[j] { self.upper[j] } else { 0.0 };
                self.pivot(r, j);
                self.beta[r] = value;
            }
        }
        for j in n..cols {
            self.upper[j] = 0.0;
            self.at_upper[j] = false;
        }
    }

    fn basis_matrix(&self, a: &[f64], n: usize) -> Vec<f64> {
        let m = self.m;
        let mut bm = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            for r in 0..m {
                bm[r * m + k] = if j < n {
                    a[r * n + j]
                } else if j - n == r {
                    1.0
                } else {
                    0.0
                };
            }
        }
        bm
    }

    /// Recomputes basic values from the original rows to shed accumulated
    /// rounding from the tableau updates.
    fn polish(&mut self, a: &[f64], b: &[f64], n: usize) {
        let m = self.m;
        if m == 0 {
            return;
        }
        let mut rhs = b.to_vec();
        for j in 0..n {
            if !self.is_basic[j] && self.at_upper[j] {
                for r in 0..m {
                    rhs[r] -= a[r * n + j] * self.upper[j];
                }
            }
        }
        let bm = self.basis_matrix(a, n);
        if let Some(x) = solve_dense(bm, rhs, m) {
            for (r, v) in x.into_iter().enumerate() {
                let hi = self.upper[self.basis[r]];
                // accept tiny excursions only; anything larger keeps the tableau value
                if v >= -FEASIBILITY_TOL && v <= hi + FEASIBILITY_TOL {
                    self.beta[r] = v.clamp(0.0, hi);
                }
            }
        }
    }

    /// Solves `B^T y = c_B` for the row multipliers.
    fn duals(&self, a: &[f64], n: usize) -> Option<Vec<f64>> {
        let m = self.m;
        if m == 0 {
            return Some(Vec::new());
        }
        let bm = self.basis_matrix(a, n);
        let mut bt = vec![0.0; m * m];
        for r in 0..m {
            for k in 0..m {
                bt[k * m + r] = bm[r * m + k];
            }
        }
        let cb: Vec<f64> = self.basis.iter().map(|&j| self.cost[j]).collect();
        solve_dense(bt, cb, m)
    }
}

/// Gaussian elimination with partial pivoting on a row-major `m x m` matrix.
fn solve_dense(mut mat: Vec<f64>, mut rhs: Vec<f64>, m: usize) -> Option<Vec<f64>> {
    for col in 0..m {
        let piv_row =
            (col..m).max_by(|&i, &j| mat[i * m + col].abs().total_cmp(&mat[j * m + col].abs()))?;
        if mat[piv_row * m + col].abs() < 1e-12 {
            return None;
        }
        if piv_row != col {
            for k in 0..m {
                mat.swap(col * m + k, piv_row * m + k);
            }
            rhs.swap(col, piv_row);
        }
        let piv = mat[col * m + col];
        for r in col + 1..m {
            let f = mat[r * m + col] / piv;
            if f != 0.0 {
                for k in col..m {
                    mat[r * m + k] -= f * mat[col * m + k];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let mut s = rhs[r];
        for k in r + 1..m {
            s -= mat[r * m + k] * x[k];
        }
        x[r] = s / mat[r * m + r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
