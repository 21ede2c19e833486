//! Exhaustive subset search for 1D least squares.
//!
//! For a training set `C` and a subset `S`, both fitted in closed form, the
//! objective is `|risk_T(θ_C) − risk_T(θ_S)|` with `risk_T` the mean squared
//! error over the test set `T`. Every admissible subset is evaluated.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Target};
use crate::error::{Error, Result};
use crate::loss::SelectionMask;
use crate::scalar::{ordered_sum, Scalar};
use crate::solver::{binomial, next_combination};

pub const MAX_TRAIN_POINTS: usize = 16;
pub const ENUMERATION_CAP: u128 = 100_000;

/// Closed-form least-squares line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub w: f64,
    pub c: f64,
    /// All `x` equal (or a single point): intercept-only fit with `w = 0`.
    pub degenerate: bool,
}

impl OlsFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.w * x + self.c
    }
}

/// Least-squares slope and intercept through `(x, y)` points.
pub fn ols_fit(points: &[(f64, f64)]) -> Result<OlsFit> {
    if points.is_empty() {
        return Err(Error::usage("least squares needs at least one point"));
    }
    let n = points.len() as f64;
    let mx = ordered_sum(points.iter().map(|p| p.0)) / n;
    let my = ordered_sum(points.iter().map(|p| p.1)) / n;
    let sxx = ordered_sum(points.iter().map(|p| (p.0 - mx) * (p.0 - mx)));
    let sxy = ordered_sum(points.iter().map(|p| (p.0 - mx) * (p.1 - my)));
    if sxx == 0.0 {
        return Ok(OlsFit {
            w: 0.0,
            c: my,
            degenerate: true,
        });
    }
    let w = sxy / sxx;
    Ok(OlsFit {
        w,
        c: my - w * mx,
        degenerate: false,
    })
}

/// Mean squared error of a line over `(x, y)` points.
pub fn risk(fit: &OlsFit, points: &[(f64, f64)]) -> f64 {
    let sum = ordered_sum(points.iter().map(|&(x, y)| {
        let r = fit.predict(x) - y;
        r * r
    }));
    sum / points.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetPolicy {
    /// Subsets of exactly `K` points.
    #[default]
    ExactK,
    /// Subsets of `1..=K` points.
    AtMostK,
}

#[derive(Debug, Clone)]
pub struct BilevelInstance {
    train: Vec<(f64, f64)>,
    test: Vec<(f64, f64)>,
    k: usize,
    policy: SubsetPolicy,
}

fn points<T: Scalar>(data: &Dataset<T>, what: &str) -> Result<Vec<(f64, f64)>> {
    if data.dim() != 1 {
        return Err(Error::usage(format!("{what} set must be one-dimensional regression data")));
    }
    (0..data.len())
        .map(|i| match data.target(i) {
            Target::Real(y) => Ok((data.row(i)[0].as_f64(), y.as_f64())),
            Target::Class(_) => Err(Error::usage(format!("{what} set has class labels"))),
        })
        .collect()
}

impl BilevelInstance {
    pub fn new<T: Scalar>(train: &Dataset<T>, test: &Dataset<T>, k: usize, policy: SubsetPolicy) -> Result<Self> {
        Self::from_points(points(train, "train")?, points(test, "test")?, k, policy)
    }

    pub fn from_points(train: Vec<(f64, f64)>, test: Vec<(f64, f64)>, k: usize, policy: SubsetPolicy) -> Result<Self> {
        if train.is_empty() || train.len() > MAX_TRAIN_POINTS {
            return Err(Error::usage(format!(
                "train set must have 1..={MAX_TRAIN_POINTS} points, got {}",
                train.len()
            )));
        }
        if test.is_empty() {
            return Err(Error::usage("test set is empty"));
        }
        if k == 0 || k > train.len() {
            return Err(Error::usage(format!("K must lie in 1..={}, got {k}", train.len())));
        }
        let instance = Self {
            train,
            test,
            k,
            policy,
        };
        let required = instance.subset_count();
        if required > ENUMERATION_CAP {
            return Err(Error::CapExceeded {
                required,
                cap: ENUMERATION_CAP,
                hint: "reduce the train set or K".into(),
            });
        }
        Ok(instance)
    }

    /// Number of subsets the policy admits.
    pub fn subset_count(&self) -> u128 {
        let n = self.train.len();
        match self.policy {
            SubsetPolicy::ExactK => binomial(n, self.k),
            SubsetPolicy::AtMostK => (1..=self.k).map(|s| binomial(n, s)).sum(),
        }
    }

    pub fn train(&self) -> &[(f64, f64)] {
        &self.train
    }

    pub fn test(&self) -> &[(f64, f64)] {
        &self.test
    }

    /// Objective of one subset given by training indices.
    pub fn objective_of(&self, subset: &[usize]) -> Result<(f64, OlsFit)> {
        let full = ols_fit(&self.train)?;
        let full_risk = risk(&full, &self.test);
        let mut sorted = subset.to_vec();
        sorted.sort_unstable();
        let fit = ols_fit(&sorted.iter().map(|&i| self.train[i]).collect::<Vec<_>>())?;
        Ok(((full_risk - risk(&fit, &self.test)).abs(), fit))
    }
}

#[derive(Debug, Clone)]
pub struct BilevelResult {
    pub mask: SelectionMask,
    pub objective: f64,
    pub full_fit: OlsFit,
    pub subset_fit: OlsFit,
    pub full_risk: f64,
    pub subset_risk: f64,
    pub evaluated: u64,
}

/// Evaluates every admissible subset and returns the best; ties go to the
/// lexicographically smallest index list.
pub fn bilevel_enumerate(instance: &BilevelInstance) -> Result<BilevelResult> {
    let n = instance.train.len();
    let full_fit = ols_fit(&instance.train)?;
    let full_risk = risk(&full_fit, &instance.test);
    let sizes = match instance.policy {
        SubsetPolicy::ExactK => instance.k..=instance.k,
        SubsetPolicy::AtMostK => 1..=instance.k,
    };

    let mut best: Option<(f64, Vec<usize>, OlsFit, f64)> = None;
    let mut evaluated = 0u64;
    let mut chosen = Vec::with_capacity(instance.k);
    for size in sizes {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            chosen.clear();
            chosen.extend(combo.iter().map(|&i| instance.train[i]));
            let fit = ols_fit(&chosen)?;
            let r = risk(&fit, &instance.test);
            let obj = (full_risk - r).abs();
            evaluated += 1;
            let better = match &best {
                None => true,
                Some((b, idx, _, _)) => obj < *b || (obj == *b && combo < *idx),
            };
            if better {
                best = Some((obj, combo.clone(), fit, r));
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
    }
    let (objective, indices, subset_fit, subset_risk) = best.expect("at least one subset");
    Ok(BilevelResult {
        mask: SelectionMask::from_indices(n, indices),
        objective,
        full_fit,
        subset_fit,
        full_risk,
        subset_risk,
        evaluated,
    })
}
