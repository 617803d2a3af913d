//! Constant-prediction solvers: the value `c` minimizing the mean hinge loss
//! of a collection of interval targets.
//!
//! The summed loss `L(c) = sum ReLU(a_i - c)^p + sum ReLU(c - b_i)^p`, with
//! `a_i = y_l + eps` and `b_i = y_u - eps`, is convex and piecewise
//! polynomial with breakpoints at the `a_i` and `b_i`. [`LeafRule::Exact`]
//! evaluates it at every breakpoint and at the stationary point of every
//! quadratic segment, which yields the exact minimizer. [`LeafRule::Candidates`]
//! restricts the search to the bounds and midpoints of the fully finite
//! targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalTarget;
use crate::loss::{hinge_loss, HingeLossSpec};

/// Relative tolerance under which two losses (or gains) count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[inline]
pub(crate) fn tie_slack(best: f64) -> f64 {
    TIE_TOLERANCE * best.abs().max(1.0)
}

/// How a leaf value is chosen from a set of targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafRule {
    /// Smallest exact minimizer of the mean hinge loss.
    #[default]
    Exact,
    /// Best of the finite bounds and midpoints (ties to the smallest).
    Candidates,
}

impl LeafRule {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Candidates => "candidates",
        }
    }

    pub fn solve(&self, targets: &[IntervalTarget], spec: &HingeLossSpec) -> Result<f64> {
        match self {
            Self::Exact => best_constant(targets, spec),
            Self::Candidates => best_candidate(targets, spec),
        }
    }
}

/// Sorted, deduplicated bounds and midpoints of every fully finite target.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    values: Vec<f64>,
}

impl CandidateSet {
    pub fn from_targets<'a>(targets: impl IntoIterator<Item = &'a IntervalTarget>) -> Self {
        let mut values = Vec::new();
        for t in targets {
            if t.is_finite() {
                values.push(t.lower());
                values.push(t.upper());
                values.push(0.5 * (t.lower() + t.upper()));
            }
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Smallest `c` minimizing the mean hinge loss over `targets`.
pub fn best_constant(targets: &[IntervalTarget], spec: &HingeLossSpec) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Empty("targets"));
    }
    let mut sweep = LeafSweep::new(targets, *spec, LeafRule::Exact);
    Ok(sweep.solve_all().value)
}

/// Best member of the [`CandidateSet`]; when it is empty, the largest
/// finite lower bound, else the smallest finite upper bound, else 0.
pub fn best_candidate(targets: &[IntervalTarget], spec: &HingeLossSpec) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Empty("targets"));
    }
    let mut sweep = LeafSweep::new(targets, *spec, LeafRule::Candidates);
    Ok(sweep.solve_all().value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafSolution {
    pub value: f64,
    /// Summed (not mean) hinge loss at `value`.
    pub total_loss: f64,
}

/// Reusable sweep state over a fixed collection of targets; subsets are
/// selected with a membership mask so tree split search can evaluate many
/// children without re-sorting.
#[derive(Debug, Clone)]
pub(crate) struct LeafSweep {
    spec: HingeLossSpec,
    rule: LeafRule,
    /// Coordinates are stored relative to `shift` for conditioning.
    shift: f64,
    /// `(a_i - shift, owner)`, ascending.
    lowers: Vec<(f64, u32)>,
    /// `(b_i - shift, owner)`, ascending.
    uppers: Vec<(f64, u32)>,
    /// `(original value, owner)` of candidate points, ascending.
    candidates: Vec<(f64, u32)>,
    /// Raw finite bounds per owner, for the candidate fallback.
    raw: Vec<(f64, f64)>,
    /// Scratch list of `(point, loss)` evaluations.
    evals: Vec<(f64, f64)>,
}

/// Running sums of the active lower and upper hinge terms.
#[derive(Default, Clone, Copy)]
struct ActiveSums {
    lower_count: f64,
    lower_sum: f64,
    lower_sq: f64,
    upper_count: f64,
    upper_sum: f64,
    upper_sq: f64,
}

impl ActiveSums {
    #[inline]
    fn add_lower(&mut self, a: f64) {
        self.lower_count += 1.0;
        self.lower_sum += a;
        self.lower_sq += a * a;
    }

    #[inline]
    fn remove_lower(&mut self, a: f64) {
        self.lower_count -= 1.0;
        if self.lower_count == 0.0 {
            self.lower_sum = 0.0;
            self.lower_sq = 0.0;
        } else {
            self.lower_sum -= a;
            self.lower_sq -= a * a;
        }
    }

    #[inline]
    fn add_upper(&mut self, b: f64) {
        self.upper_count += 1.0;
        self.upper_sum += b;
        self.upper_sq += b * b;
    }

    /// `L(c)` in shifted coordinates.
    #[inline]
    fn loss(&self, c: f64, p: u8) -> f64 {
        let v = if p == 1 {
            (self.lower_sum - self.lower_count * c) + (self.upper_count * c - self.upper_sum)
        } else {
            (self.lower_sq - 2.0 * c * self.lower_sum + self.lower_count * c * c)
                + (self.upper_sq - 2.0 * c * self.upper_sum + self.upper_count * c * c)
        };
        v.max(0.0)
    }

    /// Stationary point of the quadratic segment, if it has curvature.
    #[inline]
    fn stationary(&self) -> Option<f64> {
        let k = self.lower_count + self.upper_count;
        (k > 0.0).then(|| (self.lower_sum + self.upper_sum) / k)
    }
}

impl LeafSweep {
    pub(crate) fn new<'a>(
        targets: impl IntoIterator<Item = &'a IntervalTarget>,
        spec: HingeLossSpec,
        rule: LeafRule,
    ) -> Self {
        let eps = spec.epsilon();
        let mut lowers = Vec::new();
        let mut uppers = Vec::new();
        let mut candidates = Vec::new();
        let mut raw = Vec::new();
        for (owner, t) in targets.into_iter().enumerate() {
            let owner = owner as u32;
            raw.push((t.lower(), t.upper()));
            if t.has_finite_lower() {
                lowers.push((t.lower() + eps, owner));
            }
            if t.has_finite_upper() {
                uppers.push((t.upper() - eps, owner));
            }
            if rule == LeafRule::Candidates && t.is_finite() {
                candidates.push((t.lower(), owner));
                candidates.push((t.upper(), owner));
                candidates.push((0.5 * (t.lower() + t.upper()), owner));
            }
        }
        let (lo, hi) = lowers
            .iter()
            .chain(&uppers)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(v, _)| (lo.min(v), hi.max(v)));
        let shift = if lo.is_finite() { 0.5 * (lo + hi) } else { 0.0 };
        for entry in lowers.iter_mut().chain(uppers.iter_mut()) {
            entry.0 -= shift;
        }
        lowers.sort_by(|x, y| x.0.total_cmp(&y.0));
        uppers.sort_by(|x, y| x.0.total_cmp(&y.0));
        candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
        Self {
            spec,
            rule,
            shift,
            lowers,
            uppers,
            candidates,
            raw,
            evals: Vec::new(),
        }
    }

    pub(crate) fn solve_all(&mut self) -> LeafSolution {
        self.solve(|_| true)
    }

    /// Minimize over the targets whose owner index satisfies `member`.
    pub(crate) fn solve(&mut self, member: impl Fn(usize) -> bool) -> LeafSolution {
        self.evals.clear();
        match self.rule {
            LeafRule::Exact => self.sweep_exact(&member),
            LeafRule::Candidates => self.sweep_candidates(&member),
        }
        if self.evals.is_empty() {
            return self.fallback(&member);
        }
        let best = self.evals.iter().fold(f64::INFINITY, |m, &(_, l)| m.min(l));
        let limit = best + tie_slack(best);
        // evals are ascending in position, so the first within the slack is
        // the smallest tied minimizer
        let &(value, total_loss) = self
            .evals
            .iter()
            .find(|&&(_, l)| l <= limit)
            .expect("nonempty evaluations");
        LeafSolution { value, total_loss }
    }

    fn sweep_exact(&mut self, member: &impl Fn(usize) -> bool) {
        let p = self.spec.p();
        let shift = self.shift;
        let mut sums = ActiveSums::default();
        for &(a, o) in &self.lowers {
            if member(o as usize) {
                sums.add_lower(a);
            }
        }
        let (mut i, mut j) = (0, 0);
        let mut prev = f64::NEG_INFINITY;
        loop {
            while i < self.lowers.len() && !member(self.lowers[i].1 as usize) {
                i += 1;
            }
            while j < self.uppers.len() && !member(self.uppers[j].1 as usize) {
                j += 1;
            }
            let next_lower = self.lowers.get(i).map_or(f64::INFINITY, |e| e.0);
            let next_upper = self.uppers.get(j).map_or(f64::INFINITY, |e| e.0);
            let t = next_lower.min(next_upper);
            if t == f64::INFINITY {
                break;
            }
            if p == 2 && prev > f64::NEG_INFINITY {
                if let Some(c) = sums.stationary() {
                    if c > prev && c < t {
                        self.evals.push((c + shift, sums.loss(c, p)));
                    }
                }
            }
            // apply every event located at t
            while i < self.lowers.len() && self.lowers[i].0 <= t {
                if member(self.lowers[i].1 as usize) {
                    sums.remove_lower(self.lowers[i].0);
                }
                i += 1;
            }
            while j < self.uppers.len() && self.uppers[j].0 <= t {
                if member(self.uppers[j].1 as usize) {
                    sums.add_upper(self.uppers[j].0);
                }
                j += 1;
            }
            self.evals.push((t + shift, sums.loss(t, p)));
            prev = t;
        }
    }

    fn sweep_candidates(&mut self, member: &impl Fn(usize) -> bool) {
        let p = self.spec.p();
        let shift = self.shift;
        let mut sums = ActiveSums::default();
        for &(a, o) in &self.lowers {
            if member(o as usize) {
                sums.add_lower(a);
            }
        }
        let (mut i, mut j) = (0, 0);
        let mut last = f64::NAN;
        for &(value, owner) in &self.candidates {
            if !member(owner as usize) || value == last {
                continue;
            }
            last = value;
            let c = value - shift;
            while i < self.lowers.len() && self.lowers[i].0 <= c {
                if member(self.lowers[i].1 as usize) {
                    sums.remove_lower(self.lowers[i].0);
                }
                i += 1;
            }
            while j < self.uppers.len() && self.uppers[j].0 < c {
                if member(self.uppers[j].1 as usize) {
                    sums.add_upper(self.uppers[j].0);
                }
                j += 1;
            }
            self.evals.push((value, sums.loss(c, p)));
        }
    }

    fn fallback(&self, member: &impl Fn(usize) -> bool) -> LeafSolution {
        let mut max_lower = f64::NEG_INFINITY;
        let mut min_upper = f64::INFINITY;
        for (o, &(lo, hi)) in self.raw.iter().enumerate() {
            if member(o) {
                if lo.is_finite() {
                    max_lower = max_lower.max(lo);
                }
                if hi.is_finite() {
                    min_upper = min_upper.min(hi);
                }
            }
        }
        let value = if max_lower.is_finite() {
            max_lower
        } else if min_upper.is_finite() {
            min_upper
        } else {
            0.0
        };
        let total_loss = self.direct_loss(value, member);
        LeafSolution { value, total_loss }
    }

    /// Summed loss at `value`, evaluated term by term.
    pub(crate) fn direct_loss(&self, value: f64, member: &impl Fn(usize) -> bool) -> f64 {
        self.raw
            .iter()
            .enumerate()
            .filter(|(o, _)| member(*o))
            .map(|(_, &(lo, hi))| {
                // raw bounds come from validated targets
                let t = IntervalTarget::new(lo, hi).expect("validated target");
                hinge_loss(value, &t, &self.spec)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    fn t(l: f64, u: f64) -> IntervalTarget {
        IntervalTarget::new(l, u).unwrap()
    }

    fn mean_loss(c: f64, targets: &[IntervalTarget], spec: &HingeLossSpec) -> f64 {
        targets.iter().map(|x| hinge_loss(c, x, spec)).sum::<f64>() / targets.len() as f64
    }

    #[test]
    fn tie_break_to_smallest() {
        let sq = HingeLossSpec::squared();
        assert_eq!(best_constant(&[t(2.0, 5.0)], &sq).unwrap(), 2.0);
        assert_eq!(best_constant(&[t(1.0, 3.0), t(2.0, 4.0)], &sq).unwrap(), 2.0);
        assert_eq!(best_candidate(&[t(2.0, 5.0)], &sq).unwrap(), 2.0);
        assert_eq!(best_candidate(&[t(1.0, 3.0), t(2.0, 4.0)], &sq).unwrap(), 2.0);
    }

    #[test]
    fn matches_grid_search_on_mixed_censoring() {
        let sq = HingeLossSpec::squared();
        let targets = [t(1.0, 2.0), t(3.0, INF), t(-INF, 1.5)];
        let c = best_constant(&targets, &sq).unwrap();
        let achieved = mean_loss(c, &targets, &sq);
        let grid_best = (0..=100_000)
            .map(|k| mean_loss(-5.0 + k as f64 * 1e-4, &targets, &sq))
            .fold(INF, f64::min);
        assert!((achieved - grid_best).abs() < 1e-3);
        assert!((c - 13.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn empty_candidate_fallback() {
        let sq = HingeLossSpec::squared();
        assert_eq!(best_candidate(&[t(3.0, INF), t(1.0, INF)], &sq).unwrap(), 3.0);
        assert_eq!(best_candidate(&[t(-INF, 3.0), t(-INF, 1.0)], &sq).unwrap(), 1.0);
        assert_eq!(best_candidate(&[t(-INF, 3.0), t(2.0, INF)], &sq).unwrap(), 2.0);
        assert_eq!(best_candidate(&[t(-INF, INF)], &sq).unwrap(), 0.0);
        // the exact solver handles one-sided targets directly
        assert_eq!(best_constant(&[t(3.0, INF), t(1.0, INF)], &sq).unwrap(), 3.0);
        assert_eq!(best_constant(&[t(-INF, 3.0), t(-INF, 1.0)], &sq).unwrap(), 1.0);
        assert_eq!(best_constant(&[t(-INF, 1.0), t(3.0, INF)], &sq).unwrap(), 2.0);
        assert_eq!(best_constant(&[t(-INF, INF)], &sq).unwrap(), 0.0);
    }

    #[test]
    fn empty_targets_rejected() {
        assert!(best_constant(&[], &HingeLossSpec::squared()).is_err());
        assert!(best_candidate(&[], &HingeLossSpec::squared()).is_err());
    }

    #[test]
    fn candidate_set_contents() {
        let set = CandidateSet::from_targets(&[t(1.0, 3.0), t(2.0, 2.0), t(0.0, INF)]);
        assert_eq!(set.values(), &[1.0, 2.0, 3.0]);
        assert!(CandidateSet::from_targets(&[t(0.0, INF)]).is_empty());
    }

    #[test]
    fn absolute_hinge_with_margin_is_exact() {
        let spec = HingeLossSpec::new(1, 0.5).unwrap();
        let targets = [t(0.0, 1.0), t(0.5, 3.0), t(2.0, INF), t(-INF, 0.2)];
        let c = best_constant(&targets, &spec).unwrap();
        let achieved = mean_loss(c, &targets, &spec);
        let grid_best = (0..=80_000)
            .map(|k| mean_loss(-4.0 + k as f64 * 1e-4, &targets, &spec))
            .fold(INF, f64::min);
        assert!(achieved <= grid_best + 1e-9);
    }

    #[test]
    fn masked_solve_matches_subset() {
        let sq = HingeLossSpec::squared();
        let targets = [t(0.0, 1.0), t(5.0, 6.0), t(2.0, INF), t(-INF, 4.0)];
        let mut sweep = LeafSweep::new(&targets, sq, LeafRule::Exact);
        let sol = sweep.solve(|o| o % 2 == 1);
        let direct = best_constant(&[targets[1], targets[3]], &sq).unwrap();
        assert_eq!(sol.value, direct);
        assert!((sol.total_loss - sweep.direct_loss(sol.value, &|o| o % 2 == 1)).abs() < 1e-12);
    }
}
