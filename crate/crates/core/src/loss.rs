//! Per-sample losses, budgets, selection masks and the closest-mean objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ordered_sum, Scalar};

/// Per-sample losses from one forward pass over a batch.
///
/// Entries are finite and nonnegative; the vector is never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> LossVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::usage("loss vector must not be empty"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < T::zero())
        {
            return Err(Error::Input(format!(
                "loss at index {i} is {v}; losses must be finite and nonnegative"
            )));
        }
        Ok(Self { values })
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }

    /// Population standard deviation (divides by `n`).
    pub fn std_dev(&self) -> T {
        let mean = batch_mean(self);
        let sq = ordered_sum(self.values.iter().map(|&v| (v - mean) * (v - mean)));
        (sq / T::of_usize(self.len())).sqrt()
    }
}

impl<T> std::ops::Index<usize> for LossVector<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

/// How many samples of a batch may take part in the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    /// Fraction of the batch, in `(0, 1]`.
    Ratio(f64),
    /// Absolute number of samples per batch.
    Count(usize),
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Budget::Ratio(r) if !(r > 0.0 && r <= 1.0) => Err(Error::config(
                "budget.ratio",
                format!("ratio must lie in (0, 1], got {r}"),
            )),
            Budget::Count(0) => Err(Error::config("budget.count", "count must be positive")),
            _ => Ok(()),
        }
    }

    /// Selection rate this budget represents for a batch of `n` samples.
    pub fn rate(&self, n: usize) -> f64 {
        match *self {
            Budget::Ratio(r) => r,
            Budget::Count(b) => (b.min(n) as f64) / (n as f64),
        }
    }
}

/// Number of samples a budget allows in a batch of size `n`.
///
/// Ratio budgets give `max(1, floor(r·n))`, absolute budgets `min(b, n)`.
/// The product `r·n` is nudged by `1e-9` before flooring so that decimal
/// ratios such as `0.29 · 100` land on the integer they denote.
pub fn effective_budget(budget: Budget, n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    budget.validate()?;
    Ok(match budget {
        Budget::Ratio(r) => (((r * n as f64) + 1e-9).floor() as usize).clamp(1, n),
        Budget::Count(b) => b.min(n),
    })
}

/// Binary inclusion vector `z` over a batch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SelectionMask {
    bits: Vec<bool>,
}

impl SelectionMask {
    pub fn empty(n: usize) -> Self {
        Self {
            bits: vec![false; n],
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            bits: vec![true; n],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Builds a mask of length `n` with the given indices set.
    ///
    /// Panics if an index is out of range.
    pub fn from_indices(n: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; n];
        for i in indices {
            assert!(i < n, "index {i} out of range for mask of length {n}");
            bits[i] = true;
        }
        Self { bits }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Selected indices in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Where the closest-mean target comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetPolicy {
    /// The arithmetic mean of the batch losses.
    #[default]
    Mean,
    /// One Gaussian draw centred on the mean with scale `std(losses)/sqrt(b)`.
    Noisy,
}

impl TargetPolicy {
    /// Resolves the target for a batch. `b` is the subset size; `seed` feeds
    /// the instance-local stream used in noisy mode.
    pub fn resolve<T: Scalar>(&self, losses: &LossVector<T>, b: usize, seed: u64) -> T {
        let mean = batch_mean(losses);
        match self {
            TargetPolicy::Mean => mean,
            TargetPolicy::Noisy => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let z: f64 = StandardNormal.sample(&mut rng);
                let scale = losses.std_dev() / T::of_usize(b.max(1)).sqrt();
                mean + scale * T::of(z)
            }
        }
    }
}

/// Whether a solver must pick exactly `b` samples or at most `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cardinality {
    #[default]
    Exact,
    AtMost,
}

/// Arithmetic mean, accumulated in index order.
pub fn batch_mean<T: Scalar>(losses: &LossVector<T>) -> T {
    ordered_sum(losses.as_slice().iter().copied()) / T::of_usize(losses.len())
}

/// Distance between `target` and the mean of a subset whose index-order sum
/// is `sum` and whose size is `count`.
#[inline]
pub(crate) fn mean_gap<T: Scalar>(target: T, sum: T, count: usize) -> T {
    (target - sum / T::of_usize(count)).abs()
}

/// `|target − mean of the selected losses|`.
pub fn subset_objective<T: Scalar>(
    losses: &LossVector<T>,
    mask: &SelectionMask,
    target: T,
) -> Result<T> {
    if mask.len() != losses.len() {
        return Err(Error::usage(format!(
            "mask length {} does not match loss vector length {}",
            mask.len(),
            losses.len()
        )));
    }
    let count = mask.popcount();
    if count == 0 {
        return Err(Error::usage("mask selects no samples"));
    }
    let sum = ordered_sum(
        losses
            .as_slice()
            .iter()
            .zip(mask.bits())
            .filter_map(|(&l, &z)| z.then_some(l)),
    );
    Ok(mean_gap(target, sum, count))
}
