//! Closest-mean subset selection.
//!
//! Given per-sample losses `l`, a subset size `b` and a target `t`, choose
//! `z ∈ {0,1}^n` with `Σz = b` minimising `|t − (1/b)·Σ z_i l_i|`.
//!
//! Three solvers are provided: exhaustive enumeration (the reference), an
//! exact branch-and-bound that scales to a few hundred samples, and the
//! strided heuristic that picks evenly spaced ranks of the loss ordering.
//!
//! All exact solvers break ties between optimal subsets by the
//! lexicographically smallest ascending index sequence, and all of them
//! accumulate subset sums in index order, so equal subsets always produce
//! bit-identical objective values.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::loss::{mean_gap, subset_objective, Cardinality, LossVector, SelectionMask, TargetPolicy};
use crate::scalar::Scalar;

/// Default cap on the number of subsets [`brute_force_select`] enumerates.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Default node limit for [`branch_and_bound_select`].
pub const DEFAULT_NODE_LIMIT: u64 = 1_000_000;

/// Objective at or below which branch-and-bound stops searching.
pub const DEFAULT_EPSILON_ABS: f64 = 1e-12;

/// One closest-mean selection problem.
#[derive(Debug, Clone)]
pub struct SubsetInstance<T> {
    losses: LossVector<T>,
    budget: usize,
    target_policy: TargetPolicy,
    seed: u64,
    cardinality: Cardinality,
}

impl<T: Scalar> SubsetInstance<T> {
    /// Builds an instance choosing exactly `budget` of the losses, with the
    /// deterministic mean target.
    pub fn new(losses: LossVector<T>, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::usage("subset size must be at least 1"));
        }
        if budget > losses.len() {
            return Err(Error::usage(format!(
                "subset size {budget} exceeds the number of losses {}",
                losses.len()
            )));
        }
        Ok(Self {
            losses,
            budget,
            target_policy: TargetPolicy::Mean,
            seed: 0,
            cardinality: Cardinality::Exact,
        })
    }

    pub fn with_target(mut self, policy: TargetPolicy, seed: u64) -> Self {
        self.target_policy = policy;
        self.seed = seed;
        self
    }

    pub fn with_cardinality(mut self, cardinality: Cardinality) -> Self {
        self.cardinality = cardinality;
        self
    }

    pub fn losses(&self) -> &LossVector<T> {
        &self.losses
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn cardinality(&self) -> Cardinality {
        self.cardinality
    }

    pub fn target_policy(&self) -> TargetPolicy {
        self.target_policy
    }

    /// The target mean. Noisy targets are drawn from the instance seed, so
    /// repeated calls agree.
    pub fn target(&self) -> T {
        self.target_policy
            .resolve(&self.losses, self.budget, self.seed)
    }

    fn sizes(&self) -> std::ops::RangeInclusive<usize> {
        match self.cardinality {
            Cardinality::Exact => self.budget..=self.budget,
            Cardinality::AtMost => 1..=self.budget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    ProvenOptimal,
    BudgetExhaustedBestFound,
    Heuristic,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::ProvenOptimal => "proven-optimal",
            SolveStatus::BudgetExhaustedBestFound => "budget-exhausted-best-found",
            SolveStatus::Heuristic => "heuristic",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport<T> {
    pub mask: SelectionMask,
    pub objective: T,
    pub target: T,
    pub status: SolveStatus,
    pub nodes_explored: u64,
    pub wall_time: Duration,
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc·(n−i)/(i+1) is integral; dividing out the common factor first
        // keeps the intermediate within range.
        let den = i as u128 + 1;
        let g = gcd(acc, den);
        let factor = (n - i) as u128 / (den / g);
        acc = match (acc / g).checked_mul(factor) {
            Some(v) => v,
            None => return u128::MAX,
        };
    }
    acc
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Lexicographic comparison of ascending index sequences.
fn lex_cmp(a: &[usize], b: &[usize]) -> Ordering {
    a.cmp(b)
}

/// Exhaustive search over every admissible subset.
///
/// Refuses instances with more than [`DEFAULT_ENUMERATION_CAP`] subsets.
pub fn brute_force_select<T: Scalar>(instance: &SubsetInstance<T>) -> Result<SolveReport<T>> {
    brute_force_select_with_cap(instance, DEFAULT_ENUMERATION_CAP)
}

pub fn brute_force_select_with_cap<T: Scalar>(
    instance: &SubsetInstance<T>,
    cap: u128,
) -> Result<SolveReport<T>> {
    let n = instance.len();
    let required = instance
        .sizes()
        .fold(0u128, |acc, k| acc.saturating_add(binomial(n, k)));
    if required > cap {
        return Err(Error::CapExceeded {
            required,
            cap,
            hint: "use branch_and_bound_select for instances of this size".into(),
        });
    }

    let start = Instant::now();
    let losses = instance.losses.as_slice();
    let target = instance.target();
    let mut best: Option<(T, Vec<usize>)> = None;
    let mut evaluated = 0u64;

    for k in instance.sizes() {
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            evaluated += 1;
            let mut sum = T::zero();
            for &i in &combo {
                sum += losses[i];
            }
            let obj = mean_gap(target, sum, k);
            let better = match &best {
                None => true,
                Some((b, set)) => obj < *b || (obj == *b && lex_cmp(&combo, set) == Ordering::Less),
            };
            if better {
                best = Some((obj, combo.clone()));
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
    }

    let (objective, set) = best.expect("at least one subset is enumerated");
    Ok(SolveReport {
        mask: SelectionMask::from_indices(n, set),
        objective,
        target,
        status: SolveStatus::ProvenOptimal,
        nodes_explored: evaluated,
        wall_time: start.elapsed(),
    })
}

/// Advances `combo` to the next `k`-combination of `0..n` in lexicographic
/// order. Returns `false` when `combo` was the last one.
pub(crate) fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exact closest-mean selection by depth-first branch-and-bound.
///
/// Branching visits indices in ascending order, include before exclude, so
/// leaves are reached in lexicographic order of their index sets. At a node
/// with partial sum `s` and `r` samples still to choose from the suffix
/// starting at `i`, the reachable subset sums form the interval
/// `[s + (r smallest of the suffix), s + (r largest of the suffix)]`; the
/// node is pruned when the distance from `b·target` to that interval, over
/// `b`, exceeds the incumbent objective.
///
/// The incumbent starts from [`strided_select`]. The search stops early once
/// a leaf it reached itself scores `≤ epsilon_abs`, and gives up with the
/// incumbent after `node_limit` nodes.
pub fn branch_and_bound_select<T: Scalar>(
    instance: &SubsetInstance<T>,
    node_limit: u64,
    epsilon_abs: T,
) -> Result<SolveReport<T>> {
    let start = Instant::now();
    let n = instance.len();
    let target = instance.target();
    let losses = instance.losses.as_slice();

    let mut best: Option<(T, Vec<usize>)> = None;
    let mut nodes = 0u64;
    let mut complete = true;

    for k in instance.sizes() {
        let seed = strided_select(&instance.losses, k)?;
        let seed_obj = subset_objective(&instance.losses, &seed, target)?;
        let seed_set = seed.indices();

        let tables = SuffixBounds::new(losses, k);
        let mut search = Search {
            losses,
            k,
            bk: T::of_usize(k) * target,
            target,
            tables: &tables,
            slack: bound_slack(losses, target, n),
            epsilon: epsilon_abs,
            node_limit: node_limit.saturating_sub(nodes),
            nodes: 0,
            stack: Vec::with_capacity(k),
            best_obj: seed_obj,
            best_set: seed_set,
            found_by_search: false,
            stop: Stop::No,
        };
        search.descend(0, k, T::zero());
        nodes += search.nodes;
        match search.stop {
            Stop::Limit => complete = false,
            Stop::No | Stop::Converged => {}
        }

        let candidate = (search.best_obj, search.best_set);
        best = Some(match best {
            None => candidate,
            Some(prev) => {
                if candidate.0 < prev.0
                    || (candidate.0 == prev.0 && lex_cmp(&candidate.1, &prev.1) == Ordering::Less)
                {
                    candidate
                } else {
                    prev
                }
            }
        });
        if !complete {
            break;
        }
    }

    let (objective, set) = best.expect("at least one subset size is searched");
    Ok(SolveReport {
        mask: SelectionMask::from_indices(n, set),
        objective,
        target,
        status: if complete {
            SolveStatus::ProvenOptimal
        } else {
            SolveStatus::BudgetExhaustedBestFound
        },
        nodes_explored: nodes,
        wall_time: start.elapsed(),
    })
}

/// Rounding allowance for bound-versus-leaf comparisons. Bounds are summed in
/// a different order than leaf objectives, so a node is only pruned when its
/// bound clears the incumbent by more than accumulated rounding.
fn bound_slack<T: Scalar>(losses: &[T], target: T, n: usize) -> T {
    let max = losses.iter().copied().fold(T::zero(), T::max);
    T::epsilon() * T::of_usize(4 * (n + 2)) * (max + target.abs())
}

/// Sums of the `r` smallest and `r` largest values of every suffix.
struct SuffixBounds<T> {
    width: usize,
    min_sum: Vec<T>,
    max_sum: Vec<T>,
}

impl<T: Scalar> SuffixBounds<T> {
    fn new(losses: &[T], k: usize) -> Self {
        let n = losses.len();
        let width = k + 1;
        let mut min_sum = vec![T::zero(); (n + 1) * width];
        let mut max_sum = vec![T::zero(); (n + 1) * width];
        let mut sorted: Vec<T> = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let v = losses[i];
            let pos = sorted.partition_point(|&x| x < v);
            sorted.insert(pos, v);
            let len = sorted.len();
            let row = i * width;
            let mut lo = T::zero();
            let mut hi = T::zero();
            for r in 1..=k.min(len) {
                lo += sorted[r - 1];
                hi += sorted[len - r];
                min_sum[row + r] = lo;
                max_sum[row + r] = hi;
            }
        }
        Self {
            width,
            min_sum,
            max_sum,
        }
    }

    #[inline]
    fn range(&self, i: usize, r: usize) -> (T, T) {
        let at = i * self.width + r;
        (self.min_sum[at], self.max_sum[at])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stop {
    No,
    Converged,
    Limit,
}

struct Search<'a, T> {
    losses: &'a [T],
    k: usize,
    bk: T,
    target: T,
    tables: &'a SuffixBounds<T>,
    slack: T,
    epsilon: T,
    node_limit: u64,
    nodes: u64,
    stack: Vec<usize>,
    best_obj: T,
    best_set: Vec<usize>,
    found_by_search: bool,
    stop: Stop,
}

impl<T: Scalar> Search<'_, T> {
    fn descend(&mut self, i: usize, remaining: usize, sum: T) {
        if self.nodes >= self.node_limit {
            self.stop = Stop::Limit;
            return;
        }
        self.nodes += 1;

        if remaining == 0 {
            self.leaf(sum);
            return;
        }

        let (lo, hi) = self.tables.range(i, remaining);
        let (lo, hi) = (sum + lo, sum + hi);
        let gap = if self.bk < lo {
            lo - self.bk
        } else if self.bk > hi {
            self.bk - hi
        } else {
            T::zero()
        };
        if gap / T::of_usize(self.k) > self.best_obj + self.slack {
            return;
        }

        self.stack.push(i);
        self.descend(i + 1, remaining - 1, sum + self.losses[i]);
        self.stack.pop();
        if self.stop != Stop::No {
            return;
        }

        if self.losses.len() - i > remaining {
            self.descend(i + 1, remaining, sum);
        }
    }

    fn leaf(&mut self, sum: T) {
        let obj = mean_gap(self.target, sum, self.k);
        let accept = obj < self.best_obj
            || (obj == self.best_obj && lex_cmp(&self.stack, &self.best_set) != Ordering::Greater);
        if accept {
            self.best_obj = obj;
            self.best_set.clear();
            self.best_set.extend_from_slice(&self.stack);
            self.found_by_search = true;
        }
        if self.found_by_search && self.best_obj <= self.epsilon {
            self.stop = Stop::Converged;
        }
    }
}

/// Evenly spaced ranks of the descending loss order.
///
/// With `stride = n / (b + 1)`, picks sorted positions `⌊i·stride⌋` for
/// `i = 1..=b`, computed in exact integer arithmetic. Ties in the ordering
/// are broken by ascending original index; a position that is already taken
/// moves on to the next free one.
pub fn strided_select<T: Scalar>(losses: &LossVector<T>, b: usize) -> Result<SelectionMask> {
    let n = losses.len();
    if b == 0 || b > n {
        return Err(Error::usage(format!(
            "strided selection needs 1 <= b <= n, got b = {b}, n = {n}"
        )));
    }
    let values = losses.as_slice();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| {
        values[c]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&c))
    });

    let mut taken = vec![false; n];
    let mut mask = SelectionMask::empty(n);
    for i in 1..=b {
        let mut pos = i * n / (b + 1);
        while taken[pos] {
            pos = (pos + 1) % n;
        }
        taken[pos] = true;
        mask.set(order[pos], true);
    }
    Ok(mask)
}

/// Wraps [`strided_select`] in a report against the instance target.
pub fn strided_report<T: Scalar>(instance: &SubsetInstance<T>) -> Result<SolveReport<T>> {
    let start = Instant::now();
    let target = instance.target();
    let mask = strided_select(&instance.losses, instance.budget)?;
    let objective = subset_objective(&instance.losses, &mask, target)?;
    Ok(SolveReport {
        mask,
        objective,
        target,
        status: SolveStatus::Heuristic,
        nodes_explored: 0,
        wall_time: start.elapsed(),
    })
}
