//! The multiplier player: approximate best response over discretized
//! reweightings, and the box-constrained attack that searches for the most
//! unfair reweighting of a fixed model.
//!
//! Both reduce to small linear programs because a group's acceptance rate is
//! linear in the weights once the group's total mass is pinned.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::geometry::{normalize, BucketScheme, MarginalGrid, WeightSet};
use crate::hypothesis::Classifier;
use crate::linprog::{solve, LinearProgram, LpStatus};
use crate::metrics::{Notion, WeightVector};
use crate::{Error, Result};

/// One nonzero multiplier: constraint `R(w,a) - R(w,a') <= eps` scaled by
/// `value`. `label` restricts the rates to instances with that label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Length-`n` weight snapshot; zero outside the atom's population.
    pub weights: Vec<f64>,
    pub pair: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub value: f64,
}

impl Atom {
    /// Weighted masses of the two groups within the atom's population.
    pub fn masses(&self, d: &Dataset) -> Result<(f64, f64)> {
        if self.weights.len() != d.len() {
            return Err(Error::DimensionMismatch {
                expected: d.len(),
                actual: self.weights.len(),
            });
        }
        let (a, b) = self.pair;
        let mut ma = 0.0;
        let mut mb = 0.0;
        for (inst, &w) in d.instances().iter().zip(&self.weights) {
            if self.label.is_none_or(|y| y == inst.label) {
                if inst.group == a {
                    ma += w;
                } else if inst.group == b {
                    mb += w;
                }
            }
        }
        if !(ma > 0.0 && mb > 0.0) {
            return Err(Error::DegenerateMass(format!(
                "atom for pair ({a},{b}) has group masses {ma} and {mb}"
            )));
        }
        Ok((ma, mb))
    }

    /// `R(w,a) - R(w,a')` for predictions `probs`.
    pub fn rate_difference(&self, probs: &[f64], d: &Dataset) -> Result<f64> {
        if probs.len() != d.len() {
            return Err(Error::DimensionMismatch {
                expected: d.len(),
                actual: probs.len(),
            });
        }
        let (ma, mb) = self.masses(d)?;
        let (a, b) = self.pair;
        let mut ra = 0.0;
        let mut rb = 0.0;
        for ((inst, &w), &p) in d.instances().iter().zip(&self.weights).zip(probs) {
            if self.label.is_none_or(|y| y == inst.label) {
                if inst.group == a {
                    ra += w * p;
                } else if inst.group == b {
                    rb += w * p;
                }
            }
        }
        Ok(ra / ma - rb / mb)
    }
}

/// Sparse multipliers with an l1 budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseLagrange {
    pub atoms: Vec<Atom>,
    pub budget: f64,
}

impl SparseLagrange {
    pub fn empty(budget: f64) -> Self {
        Self {
            atoms: Vec::new(),
            budget,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.value).sum()
    }

    /// Adds an atom, rejecting negative values and budget overruns.
    pub fn push(&mut self, atom: Atom) -> Result<()> {
        if !(atom.value >= 0.0 && atom.value.is_finite()) {
            return Err(Error::Internal(format!(
                "multiplier value {} is invalid",
                atom.value
            )));
        }
        if self.total() + atom.value > self.budget * (1.0 + 1e-12) {
            return Err(Error::Internal(format!(
                "multipliers would exceed budget {}",
                self.budget
            )));
        }
        self.atoms.push(atom);
        Ok(())
    }

    /// Same atoms with every value and the budget multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    value: a.value * factor,
                    ..a.clone()
                })
                .collect(),
            budget: self.budget * factor,
        }
    }
}

/// Best candidate found by the multiplier player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Discretized, unnormalized weights; zero outside the population.
    pub weights: Vec<f64>,
    pub pair: (usize, usize),
    pub label: Option<u8>,
    /// `R(w,a) - R(w,a')` at `weights`.
    pub value: f64,
    /// Optimal value of the LP that produced the candidate.
    pub lp_value: f64,
    /// Grid marginals `(pi_a, pi_a')` of that LP.
    pub marginals: (f64, f64),
}

impl Violation {
    pub fn to_atom(&self, value: f64) -> Atom {
        Atom {
            weights: self.weights.clone(),
            pair: self.pair,
            label: self.label,
            value,
        }
    }
}

/// Instances over which one family of rate constraints is defined: all of
/// them for demographic parity, one label for equalized odds.
#[derive(Debug, Clone)]
struct Population {
    label: Option<u8>,
    indices: Vec<usize>,
    /// Group of each member, by local position.
    groups: Vec<usize>,
    sizes: Vec<usize>,
    group_count: usize,
    scheme: BucketScheme,
    grid: MarginalGrid,
    /// Per-instance weight bounds, as fractions of the population.
    bounds: (f64, f64),
}

impl Population {
    fn new(
        d: &Dataset,
        label: Option<u8>,
        scheme: Option<BucketScheme>,
        grid: Option<MarginalGrid>,
        gamma1: f64,
        gamma2: f64,
        weight_set: WeightSet,
    ) -> Result<Self> {
        weight_set.validate()?;
        let indices: Vec<usize> = d
            .instances()
            .iter()
            .enumerate()
            .filter(|(_, inst)| label.is_none_or(|y| inst.label == y))
            .map(|(i, _)| i)
            .collect();
        let groups: Vec<usize> = indices.iter().map(|&i| d.instances()[i].group).collect();
        let k = d.group_count();
        for g in 0..k {
            if !groups.contains(&g) {
                return Err(Error::DegenerateMass(match label {
                    None => format!("group {g} is empty"),
                    Some(y) => format!("group {g} has no instances with label {y}"),
                }));
            }
        }
        let scheme = match scheme {
            Some(s) => s,
            None => BucketScheme::new(gamma1, indices.len())?,
        };
        let grid = match grid {
            Some(g) => g,
            None => MarginalGrid::new(gamma1, gamma2, indices.len(), k)?,
        };
        if grid.groups() != k {
            return Err(Error::Config(format!(
                "marginal grid has {} groups but the data has {k}",
                grid.groups()
            )));
        }
        let mut sizes = vec![0; k];
        for &g in &groups {
            sizes[g] += 1;
        }
        let bounds = match weight_set {
            WeightSet::Simplex => (0.0, f64::INFINITY),
            ws => ws.bounds(indices.len()),
        };
        Ok(Self {
            label,
            indices,
            groups,
            sizes,
            group_count: k,
            scheme,
            grid,
            bounds,
        })
    }

    /// Necessary conditions for the LP with marginals `(pa, pb)` to be
    /// feasible: group masses lie in `[pi/(1+g2), pi]`, within what the
    /// per-instance bounds allow, and the population sums to 1.
    fn admissible(&self, a: usize, b: usize, pa: f64, pb: f64) -> bool {
        let shrink = 1.0 + self.grid.gamma2();
        let others = (self.group_count - 2) as f64 * self.grid.delta_m();
        if !self.grid.within_cap(pa + pb + others) {
            return false;
        }
        let (lo, hi) = self.bounds;
        for (g, p) in [(a, pa), (b, pb)] {
            let count = self.sizes[g] as f64;
            if count * lo > p * (1.0 + 1e-12) || count * hi < p / shrink * (1.0 - 1e-12) {
                return false;
            }
        }
        let low = (pa + pb) / shrink;
        if self.group_count == 2 {
            low <= 1.0 + 1e-12 && pa + pb >= 1.0 - 1e-12
        } else {
            low <= 1.0 + 1e-12
        }
    }

    /// Maximizes `(1/pa) sum_a w h - (1/pb) sum_b w h` over population
    /// weights summing to 1 with group masses in `[pi/(1+g2), pi]`.
    fn solve_lp(
        &self,
        probs: &[f64],
        a: usize,
        b: usize,
        pa: f64,
        pb: f64,
    ) -> Result<Option<(Vec<f64>, f64)>> {
        let m = self.indices.len();
        let mut objective = vec![0.0; m + 2];
        let mut row_a = vec![0.0; m + 2];
        let mut row_b = vec![0.0; m + 2];
        for (local, (&i, &g)) in self.indices.iter().zip(&self.groups).enumerate() {
            if g == a {
                objective[local] = probs[i] / pa;
                row_a[local] = 1.0;
            } else if g == b {
                objective[local] = -probs[i] / pb;
                row_b[local] = 1.0;
            }
        }
        row_a[m] = -1.0;
        row_b[m + 1] = -1.0;
        let mut total = vec![1.0; m + 2];
        total[m] = 0.0;
        total[m + 1] = 0.0;
        let shrink = 1.0 + self.grid.gamma2();
        let mut bounds = vec![self.bounds; m + 2];
        bounds[m] = (pa / shrink, pa);
        bounds[m + 1] = (pb / shrink, pb);
        let lp = LinearProgram::new(objective)
            .with_bounds(bounds)
            .equality(row_a, 0.0)
            .equality(row_b, 0.0)
            .equality(total, 1.0);
        let sol = solve(&lp)?;
        match sol.status {
            LpStatus::Optimal => {
                let mut w = sol.point;
                w.truncate(m);
                Ok(Some((w, sol.value)))
            }
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(Error::Internal("bounded LP reported unbounded".into())),
        }
    }

    /// Signed rate difference of groups `a` and `b` under local weights `w`.
    fn rate_difference(&self, probs: &[f64], w: &[f64], a: usize, b: usize) -> f64 {
        let (mut na, mut ma, mut nb, mut mb) = (0.0, 0.0, 0.0, 0.0);
        for ((&i, &g), &wi) in self.indices.iter().zip(&self.groups).zip(w) {
            if g == a {
                na += wi * probs[i];
                ma += wi;
            } else if g == b {
                nb += wi * probs[i];
                mb += wi;
            }
        }
        na / ma - nb / mb
    }

    fn best(&self, probs: &[f64], n: usize) -> Result<(Option<Violation>, usize)> {
        let points = self.grid.points();
        let mut best: Option<Violation> = None;
        let mut skipped = 0usize;
        for a in 0..self.group_count {
            for b in 0..self.group_count {
                if a == b {
                    continue;
                }
                for &pa in points {
                    for &pb in points {
                        if !self.admissible(a, b, pa, pb) {
                            skipped += 1;
                            continue;
                        }
                        let Some((w, lp_value)) = self.solve_lp(probs, a, b, pa, pb)? else {
                            skipped += 1;
                            continue;
                        };
                        let rounded = self.scheme.discretize(&w);
                        let value = self.rate_difference(probs, &rounded, a, b);
                        if best.as_ref().is_none_or(|v| value > v.value) {
                            let mut weights = vec![0.0; n];
                            for (&i, &x) in self.indices.iter().zip(&rounded) {
                                weights[i] = x;
                            }
                            best = Some(Violation {
                                weights,
                                pair: (a, b),
                                label: self.label,
                                value,
                                lp_value,
                                marginals: (pa, pb),
                            });
                        }
                    }
                }
            }
        }
        Ok((best, skipped))
    }
}

/// Multiplier player for a fixed dataset and discretization.
#[derive(Debug, Clone)]
pub struct Adversary {
    n: usize,
    populations: Vec<Population>,
}

impl Adversary {
    /// Buckets and marginal grids are sized by each population's count.
    /// With a box weight set every LP also keeps each instance's weight
    /// within the box, measured relative to its population.
    pub fn new(
        d: &Dataset,
        notion: Notion,
        gamma1: f64,
        gamma2: f64,
        weight_set: WeightSet,
    ) -> Result<Self> {
        let labels: Vec<Option<u8>> = match notion {
            Notion::Dp => vec![None],
            Notion::Eo => vec![Some(0), Some(1)],
        };
        let populations = labels
            .into_iter()
            .map(|y| Population::new(d, y, None, None, gamma1, gamma2, weight_set))
            .collect::<Result<_>>()?;
        Ok(Self {
            n: d.len(),
            populations,
        })
    }

    /// Demographic-parity adversary with an explicit grid and scheme.
    pub fn with_grid(d: &Dataset, grid: &MarginalGrid, scheme: &BucketScheme) -> Result<Self> {
        let pop = Population::new(
            d,
            None,
            Some(*scheme),
            Some(grid.clone()),
            0.0,
            0.0,
            WeightSet::Simplex,
        )?;
        Ok(Self {
            n: d.len(),
            populations: vec![pop],
        })
    }

    /// Candidate with the largest rate difference after discretization.
    /// Ties keep the first in (label, a, a', grid index) order.
    pub fn best_violation(&self, probs: &[f64]) -> Result<Violation> {
        if probs.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: probs.len(),
            });
        }
        let mut best: Option<Violation> = None;
        let mut skipped = 0;
        for pop in &self.populations {
            let (cand, s) = pop.best(probs, self.n)?;
            skipped += s;
            if let Some(c) = cand {
                if best.as_ref().is_none_or(|b| c.value > b.value) {
                    best = Some(c);
                }
            }
        }
        log::trace!("adversary skipped {skipped} infeasible marginal tuples");
        best.ok_or_else(|| {
            Error::Config("every marginal tuple gave an infeasible LP; adjust gamma1/gamma2".into())
        })
    }

    /// Either no multiplier or a single atom at the full budget, placed when
    /// the best violation exceeds `eps_fair`.
    pub fn best_response(
        &self,
        probs: &[f64],
        eps_fair: f64,
        budget: f64,
    ) -> Result<(SparseLagrange, Violation)> {
        let v = self.best_violation(probs)?;
        let mut lam = SparseLagrange::empty(budget);
        if v.value > eps_fair {
            lam.push(v.to_atom(budget))?;
        }
        Ok((lam, v))
    }
}

/// Demographic-parity best response for `h` using the given grid and
/// bucket scheme.
pub fn best_response_lambda<C: Classifier + ?Sized>(
    h: &C,
    d: &Dataset,
    grid: &MarginalGrid,
    scheme: &BucketScheme,
    eps_fair: f64,
    budget: f64,
) -> Result<SparseLagrange> {
    let probs = h.predict_probs(d)?;
    let adv = Adversary::with_grid(d, grid, scheme)?;
    Ok(adv.best_response(&probs, eps_fair, budget)?.0)
}

/// Worst reweighting found by the attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub epsilon: f64,
    /// Pair attaining the largest term.
    pub pair: (usize, usize),
    /// Demographic-parity difference, or the mean of the two per-label
    /// differences for equalized odds.
    pub value: f64,
    pub weights: Vec<f64>,
    /// Per-population terms: `(label, pair, value)`.
    pub terms: Vec<(Option<u8>, (usize, usize), f64)>,
}

fn check_radius(eps: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eps) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "perturbation radius must lie in [0,1], got {eps}"
        )))
    }
}

/// Maximizes the rate difference over weights in
/// `[(1-eps)/n, (1+eps)/n]` that keep every group's mass within the
/// population at its empirical value.
fn attack_population(
    probs: &[f64],
    d: &Dataset,
    label: Option<u8>,
    eps: f64,
) -> Result<((usize, usize), f64, Vec<f64>)> {
    let n = d.len();
    let k = d.group_count();
    let idx: Vec<usize> = (0..n)
        .filter(|&i| label.is_none_or(|y| d.instances()[i].label == y))
        .collect();
    let groups: Vec<usize> = idx.iter().map(|&i| d.instances()[i].group).collect();
    let m = idx.len();
    let mut share = vec![0.0; k];
    for &g in &groups {
        share[g] += 1.0 / n as f64;
    }
    if let Some(g) = share.iter().position(|&s| s == 0.0) {
        return Err(Error::DegenerateMass(format!(
            "group {g} has no instances{}",
            label.map_or(String::new(), |y| format!(" with label {y}"))
        )));
    }
    let lo = (1.0 - eps) / n as f64;
    let hi = (1.0 + eps) / n as f64;
    let total_share: f64 = share.iter().sum();
    let mut best: Option<((usize, usize), f64, Vec<f64>)> = None;
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let mut objective = vec![0.0; m];
            for (local, (&i, &g)) in idx.iter().zip(&groups).enumerate() {
                if g == a {
                    objective[local] = probs[i] / share[a];
                } else if g == b {
                    objective[local] = -probs[i] / share[b];
                }
            }
            let mut lp = LinearProgram::new(objective).with_bounds(vec![(lo, hi); m]);
            for g in 0..k {
                let row = groups
                    .iter()
                    .map(|&x| f64::from(u8::from(x == g)))
                    .collect();
                lp = lp.equality(row, share[g]);
            }
            lp = lp.equality(vec![1.0; m], total_share);
            let sol = solve(&lp)?;
            if sol.status != LpStatus::Optimal {
                return Err(Error::Internal(format!(
                    "attack LP for pair ({a},{b}) is {:?}",
                    sol.status
                )));
            }
            if best.as_ref().is_none_or(|(_, v, _)| sol.value > *v) {
                let mut full = vec![0.0; n];
                for (&i, &x) in idx.iter().zip(&sol.point) {
                    full[i] = x;
                }
                best = Some(((a, b), sol.value, full));
            }
        }
    }
    best.ok_or_else(|| Error::Internal("attack needs at least two groups".into()))
}

/// Attack on prediction vector `probs`.
pub fn attack_probs(probs: &[f64], d: &Dataset, eps: f64, notion: Notion) -> Result<AttackResult> {
    check_radius(eps)?;
    if probs.len() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            actual: probs.len(),
        });
    }
    if d.group_count() < 2 {
        return Err(Error::Config("attack needs at least two groups".into()));
    }
    match notion {
        Notion::Dp => {
            let (pair, value, weights) = attack_population(probs, d, None, eps)?;
            let weights = normalize(&weights)?.into_inner();
            Ok(AttackResult {
                epsilon: eps,
                pair,
                value,
                weights,
                terms: vec![(None, pair, value)],
            })
        }
        Notion::Eo => {
            let (p0, v0, w0) = attack_population(probs, d, Some(0), eps)?;
            let (p1, v1, w1) = attack_population(probs, d, Some(1), eps)?;
            let combined: Vec<f64> = w0.iter().zip(&w1).map(|(a, b)| a + b).collect();
            let weights = normalize(&combined)?.into_inner();
            Ok(AttackResult {
                epsilon: eps,
                pair: if v1 > v0 { p1 } else { p0 },
                value: 0.5 * (v0 + v1),
                weights,
                terms: vec![(Some(0), p0, v0), (Some(1), p1, v1)],
            })
        }
    }
}

/// Worst demographic-parity reweighting within radius `eps` of uniform.
pub fn attack_weights<C: Classifier + ?Sized>(
    h: &C,
    d: &Dataset,
    eps: f64,
) -> Result<(WeightVector, f64)> {
    let r = attack_probs(&h.predict_probs(d)?, d, eps, Notion::Dp)?;
    Ok((WeightVector::new(r.weights)?, r.value))
}

/// Attack value at each radius. Radii must be ascending.
pub fn attack_curve<C: Classifier + ?Sized>(
    h: &C,
    d: &Dataset,
    eps_list: &[f64],
    notion: Notion,
) -> Result<Vec<(f64, f64)>> {
    if eps_list.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::Config("eps list must be sorted ascending".into()));
    }
    let probs = h.predict_probs(d)?;
    eps_list
        .iter()
        .map(|&e| Ok((e, attack_probs(&probs, d, e, notion)?.value)))
        .collect()
}
