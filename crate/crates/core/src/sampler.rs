//! Loss-based selection strategies behind one interface.
//!
//! | kind         | selection                                                        |
//! |--------------|------------------------------------------------------------------|
//! | `uniform`    | simple random sample of `b` (or independent Bernoulli at rate r) |
//! | `prob`       | independent Bernoulli with `p = tanh(γ·l)`                       |
//! | `mink`       | the `b` smallest losses (or min of a random pool)                |
//! | `obftf`      | exact closest-mean subset via branch-and-bound                   |
//! | `obftf-prox` | strided ranks of the descending loss order                       |

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{
    batch_mean, effective_budget, subset_objective, Budget, Cardinality, LossVector,
    SelectionMask, TargetPolicy,
};
use crate::scalar::Scalar;
use crate::solver::{
    branch_and_bound_select, strided_select, SolveStatus, SubsetInstance, DEFAULT_EPSILON_ABS,
};

/// Node limit the `obftf` sampler hands to branch-and-bound per batch.
pub const DEFAULT_SAMPLER_NODE_LIMIT: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UniformMode {
    #[default]
    FixedSize,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinkMode {
    #[default]
    TopB,
    PooledSingle,
}

/// How `prob` obtains its temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    /// Use `gamma` as given; the budget is ignored.
    #[default]
    Fixed,
    /// Per batch, pick the γ whose mean inclusion probability equals the
    /// budget rate.
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerSpec {
    Uniform {
        #[serde(default)]
        mode: UniformMode,
    },
    Prob {
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default)]
        gamma_mode: GammaMode,
    },
    Mink {
        #[serde(default)]
        mode: MinkMode,
    },
    Obftf {
        #[serde(default = "default_node_limit")]
        node_limit: u64,
        #[serde(default = "default_epsilon")]
        epsilon_abs: f64,
        #[serde(default)]
        target: TargetPolicy,
        #[serde(default)]
        cardinality: Cardinality,
    },
    ObftfProx,
}

fn default_gamma() -> f64 {
    0.5
}

fn default_node_limit() -> u64 {
    DEFAULT_SAMPLER_NODE_LIMIT
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON_ABS
}

impl SamplerSpec {
    pub fn uniform() -> Self {
        SamplerSpec::Uniform {
            mode: UniformMode::FixedSize,
        }
    }

    pub fn prob(gamma: f64) -> Self {
        SamplerSpec::Prob {
            gamma,
            gamma_mode: GammaMode::Fixed,
        }
    }

    pub fn mink() -> Self {
        SamplerSpec::Mink {
            mode: MinkMode::TopB,
        }
    }

    pub fn obftf() -> Self {
        SamplerSpec::Obftf {
            node_limit: DEFAULT_SAMPLER_NODE_LIMIT,
            epsilon_abs: DEFAULT_EPSILON_ABS,
            target: TargetPolicy::Mean,
            cardinality: Cardinality::Exact,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SamplerSpec::Uniform { .. } => "uniform",
            SamplerSpec::Prob { .. } => "prob",
            SamplerSpec::Mink { .. } => "mink",
            SamplerSpec::Obftf { .. } => "obftf",
            SamplerSpec::ObftfProx => "obftf-prox",
        }
    }

    /// Default spec for a kind name as accepted on the command line.
    pub fn from_kind(name: &str) -> Result<Self> {
        Ok(match name {
            "uniform" => Self::uniform(),
            "prob" => Self::prob(default_gamma()),
            "mink" => Self::mink(),
            "obftf" => Self::obftf(),
            "obftf-prox" => SamplerSpec::ObftfProx,
            other => {
                return Err(Error::config(
                    "sampler.kind",
                    format!(
                        "unknown sampler '{other}' (expected uniform, prob, mink, obftf or obftf-prox)"
                    ),
                ))
            }
        })
    }

    /// Whether every call selects exactly the effective budget.
    pub fn is_fixed_cardinality(&self) -> bool {
        match self {
            SamplerSpec::Uniform { mode } => *mode == UniformMode::FixedSize,
            SamplerSpec::Prob { .. } => false,
            SamplerSpec::Mink { mode } => *mode == MinkMode::TopB,
            SamplerSpec::Obftf { cardinality, .. } => *cardinality == Cardinality::Exact,
            SamplerSpec::ObftfProx => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplerSpec::Prob { gamma, .. } if !(gamma > 0.0 && gamma.is_finite()) => Err(
                Error::config("sampler.gamma", format!("gamma must be positive, got {gamma}")),
            ),
            SamplerSpec::Obftf { node_limit: 0, .. } => {
                Err(Error::config("sampler.node_limit", "node limit must be positive"))
            }
            SamplerSpec::Obftf { epsilon_abs, .. } if !(epsilon_abs >= 0.0) => Err(Error::config(
                "sampler.epsilon_abs",
                format!("epsilon must be nonnegative, got {epsilon_abs}"),
            )),
            _ => Ok(()),
        }
    }
}

/// A mask together with how well it matches the batch.
#[derive(Debug, Clone)]
pub struct Selection<T> {
    pub mask: SelectionMask,
    /// Closest-mean objective of the mask: against the solver target for
    /// `obftf`, against the batch mean otherwise.
    pub objective: T,
    /// Solver status; `None` for samplers that do not solve anything.
    pub status: Option<SolveStatus>,
    pub nodes_explored: u64,
}

/// Selects the samples of a batch that take part in the backward pass.
pub fn select<T: Scalar, R: Rng + ?Sized>(
    spec: &SamplerSpec,
    losses: &LossVector<T>,
    budget: Budget,
    rng: &mut R,
) -> Result<SelectionMask> {
    select_detailed(spec, losses, budget, rng).map(|s| s.mask)
}

pub fn select_detailed<T: Scalar, R: Rng + ?Sized>(
    spec: &SamplerSpec,
    losses: &LossVector<T>,
    budget: Budget,
    rng: &mut R,
) -> Result<Selection<T>> {
    spec.validate()?;
    let n = losses.len();
    let b = effective_budget(budget, n)?;
    let values = losses.as_slice();

    let mask = match *spec {
        SamplerSpec::Uniform {
            mode: UniformMode::FixedSize,
        } => SelectionMask::from_indices(n, index::sample(rng, n, b)),
        SamplerSpec::Uniform {
            mode: UniformMode::Bernoulli,
        } => {
            let rate = budget.rate(n);
            let mut mask = SelectionMask::from_bits((0..n).map(|_| rng.random::<f64>() < rate).collect());
            if mask.popcount() == 0 {
                mask.set(rng.random_range(0..n), true);
            }
            mask
        }
        SamplerSpec::Prob { gamma, gamma_mode } => {
            let gamma = match gamma_mode {
                GammaMode::Fixed => gamma,
                GammaMode::Calibrated => calibrate_gamma(values, budget.rate(n)),
            };
            let mut mask = SelectionMask::from_bits(
                values
                    .iter()
                    .map(|&l| tanh_probability(gamma, l.as_f64()) > rng.random::<f64>())
                    .collect(),
            );
            if mask.popcount() == 0 {
                mask.set(argmax(values), true);
            }
            mask
        }
        SamplerSpec::Mink {
            mode: MinkMode::TopB,
        } => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &c| values[a].partial_cmp(&values[c]).unwrap().then(a.cmp(&c)));
            SelectionMask::from_indices(n, order[..b].iter().copied())
        }
        SamplerSpec::Mink {
            mode: MinkMode::PooledSingle,
        } => {
            let pool = index::sample(rng, n, b).into_vec();
            let best = pool
                .iter()
                .copied()
                .min_by(|&a, &c| values[a].partial_cmp(&values[c]).unwrap().then(a.cmp(&c)))
                .expect("pool is non-empty");
            SelectionMask::from_indices(n, [best])
        }
        SamplerSpec::Obftf {
            node_limit,
            epsilon_abs,
            target,
            cardinality,
        } => {
            let seed = match target {
                TargetPolicy::Noisy => rng.random::<u64>(),
                TargetPolicy::Mean => 0,
            };
            let instance = SubsetInstance::new(losses.clone(), b)?
                .with_target(target, seed)
                .with_cardinality(cardinality);
            let report = branch_and_bound_select(&instance, node_limit, T::of(epsilon_abs))?;
            return Ok(Selection {
                mask: report.mask,
                objective: report.objective,
                status: Some(report.status),
                nodes_explored: report.nodes_explored,
            });
        }
        SamplerSpec::ObftfProx => {
            let mask = strided_select(losses, b)?;
            let objective = subset_objective(losses, &mask, batch_mean(losses))?;
            return Ok(Selection {
                mask,
                objective,
                status: Some(SolveStatus::Heuristic),
                nodes_explored: 0,
            });
        }
    };

    let objective = subset_objective(losses, &mask, batch_mean(losses))?;
    Ok(Selection {
        mask,
        objective,
        status: None,
        nodes_explored: 0,
    })
}

/// `(1 − e^{−2γl}) / (1 + e^{−2γl})`, i.e. `tanh(γ·l)`.
#[inline]
fn tanh_probability(gamma: f64, loss: f64) -> f64 {
    let e = (-2.0 * gamma * loss).exp();
    (1.0 - e) / (1.0 + e)
}

/// Inclusion probability the `prob` sampler assigns to a sample with the
/// given loss.
pub fn inclusion_probability(spec: &SamplerSpec, loss: f64) -> Result<f64> {
    match *spec {
        SamplerSpec::Prob {
            gamma,
            gamma_mode: GammaMode::Fixed,
        } => {
            spec.validate()?;
            if !(loss >= 0.0) {
                return Err(Error::usage(format!("loss must be nonnegative, got {loss}")));
            }
            Ok(tanh_probability(gamma, loss))
        }
        SamplerSpec::Prob { .. } => Err(Error::usage(
            "inclusion probability of a calibrated prob sampler depends on the whole batch",
        )),
        _ => Err(Error::usage(format!(
            "inclusion probability is only defined for the prob sampler, not {}",
            spec.kind_name()
        ))),
    }
}

/// The γ at which the mean of `tanh(γ·l)` over the batch equals `rate`.
///
/// The mean is increasing in γ and bounded by the fraction of nonzero
/// losses; rates at or above that bound return a γ large enough to select
/// every nonzero loss with probability ≈ 1.
pub fn calibrate_gamma<T: Scalar>(losses: &[T], rate: f64) -> f64 {
    const LO: f64 = 1e-12;
    const HI: f64 = 1e12;
    let mean_p = |g: f64| {
        losses
            .iter()
            .map(|&l| tanh_probability(g, l.as_f64()))
            .sum::<f64>()
            / losses.len() as f64
    };
    if mean_p(HI) <= rate {
        return HI;
    }
    let (mut lo, mut hi) = (LO.ln(), HI.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid.exp()) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::solver::brute_force_select;
    use proptest::prelude::*;

    fn lv(v: &[f64]) -> LossVector<f64> {
        LossVector::new(v.to_vec()).unwrap()
    }

    fn all_specs() -> Vec<SamplerSpec> {
        vec![
            SamplerSpec::uniform(),
            SamplerSpec::Uniform {
                mode: UniformMode::Bernoulli,
            },
            SamplerSpec::prob(0.5),
            SamplerSpec::Prob {
                gamma: 0.5,
                gamma_mode: GammaMode::Calibrated,
            },
            SamplerSpec::mink(),
            SamplerSpec::Mink {
                mode: MinkMode::PooledSingle,
            },
            SamplerSpec::obftf(),
            SamplerSpec::Obftf {
                node_limit: 1000,
                epsilon_abs: 1e-12,
                target: TargetPolicy::Noisy,
                cardinality: Cardinality::Exact,
            },
            SamplerSpec::ObftfProx,
        ]
    }

    #[test]
    fn obftf_matches_brute_force() {
        let l = lv(&[1.0, 2.0, 3.0, 4.0]);
        let s = select_detailed(&SamplerSpec::obftf(), &l, Budget::Count(2), &mut stream(0)).unwrap();
        assert_eq!(s.mask.indices(), vec![0, 3]);
        assert_eq!(s.objective, 0.0);
        let exact = brute_force_select(&SubsetInstance::new(l, 2).unwrap()).unwrap();
        assert_eq!(s.mask, exact.mask);
    }

    #[test]
    fn uniform_fixed_size_hits_budget() {
        let l = lv(&vec![1.0; 100]);
        let m = select(&SamplerSpec::uniform(), &l, Budget::Ratio(0.1), &mut stream(3)).unwrap();
        assert_eq!(m.popcount(), 10);
    }

    #[test]
    fn mink_top_b_takes_smallest() {
        let l = lv(&[9.0, 1.0, 5.0, 3.0]);
        let m = select(&SamplerSpec::mink(), &l, Budget::Count(2), &mut stream(0)).unwrap();
        assert_eq!(m.indices(), vec![1, 3]);
    }

    #[test]
    fn mink_pooled_single_picks_pool_minimum() {
        let l = lv(&[4.0, 2.0, 8.0, 6.0, 1.0, 3.0]);
        for seed in 0..50 {
            let mut rng = stream(seed);
            let pool = index::sample(&mut stream(seed), 6, 3).into_vec();
            let m = select(
                &SamplerSpec::Mink {
                    mode: MinkMode::PooledSingle,
                },
                &l,
                Budget::Ratio(0.5),
                &mut rng,
            )
            .unwrap();
            assert_eq!(m.popcount(), 1);
            let chosen = m.indices()[0];
            assert!(pool.contains(&chosen));
            assert!(pool.iter().all(|&p| l[p] >= l[chosen]));
        }
    }

    #[test]
    fn inclusion_probability_examples() {
        let p = |g: f64, l: f64| inclusion_probability(&SamplerSpec::prob(g), l).unwrap();
        assert_eq!(p(0.7, 0.0), 0.0);
        assert!((p(0.5, 1.0) - 0.46211715726000974).abs() < 1e-12);
        let mut prev = 0.0;
        for l in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let v = p(1.0, l);
            assert!(v > prev && v < 1.0);
            prev = v;
        }
        assert!(p(1.0, 30.0) > 1.0 - 1e-12);
    }

    #[test]
    fn inclusion_probability_rejects_other_kinds() {
        assert!(matches!(
            inclusion_probability(&SamplerSpec::mink(), 1.0),
            Err(Error::Usage(_))
        ));
        assert!(inclusion_probability(&SamplerSpec::prob(1.0), -1.0).is_err());
    }

    #[test]
    fn inclusion_probability_equals_tanh_on_grid() {
        for gi in 1..=20 {
            let g = gi as f64 * 0.25;
            for li in 0..=40 {
                let l = li as f64 * 0.2;
                let p = inclusion_probability(&SamplerSpec::prob(g), l).unwrap();
                assert!((p - (g * l).tanh()).abs() <= 1e-12);
                let next = inclusion_probability(&SamplerSpec::prob(g + 0.25), l).unwrap();
                if l > 0.0 && (g * l) < 15.0 {
                    assert!(next > p);
                }
            }
        }
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let l = lv(&[1.0]);
        let bad = SamplerSpec::prob(0.0);
        assert!(matches!(
            select(&bad, &l, Budget::Count(1), &mut stream(0)),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            select(&SamplerSpec::uniform(), &l, Budget::Ratio(2.0), &mut stream(0)),
            Err(Error::Config { .. })
        ));
        assert!(SamplerSpec::from_kind("nope").is_err());
    }

    #[test]
    fn prob_falls_back_to_argmax() {
        // All-zero losses give p = 0 everywhere.
        let l = lv(&[0.0, 0.0, 0.0]);
        let m = select(&SamplerSpec::prob(1.0), &l, Budget::Count(1), &mut stream(0)).unwrap();
        assert_eq!(m.indices(), vec![0]);
        let l = lv(&[1e-30, 2e-30, 0.0]);
        let m = select(&SamplerSpec::prob(1e-3), &l, Budget::Count(1), &mut stream(0)).unwrap();
        assert_eq!(m.indices(), vec![1]);
    }

    #[test]
    fn calibrated_gamma_matches_rate() {
        let losses: Vec<f64> = (1..=128).map(|i| (i as f64 * 0.37).sin().abs() * 3.0 + 0.01).collect();
        for rate in [0.1, 0.25, 0.5] {
            let g = calibrate_gamma(&losses, rate);
            let mean: f64 = losses.iter().map(|&l| (g * l).tanh()).sum::<f64>() / 128.0;
            assert!((mean - rate).abs() < 1e-9, "rate {rate} got {mean}");
        }
        assert_eq!(calibrate_gamma(&[0.0, 0.0], 0.5), 1e12);
    }

    #[test]
    fn bernoulli_uniform_rate() {
        let l = lv(&vec![1.0; 1000]);
        let spec = SamplerSpec::Uniform {
            mode: UniformMode::Bernoulli,
        };
        let total: usize = (0..50)
            .map(|s| select(&spec, &l, Budget::Ratio(0.2), &mut stream(s)).unwrap().popcount())
            .sum();
        let rate = total as f64 / 50_000.0;
        assert!((rate - 0.2).abs() < 0.01);
        // Tiny rates still select one sample.
        let l = lv(&[1.0; 3]);
        let m = select(&spec, &l, Budget::Ratio(1e-9), &mut stream(1)).unwrap();
        assert_eq!(m.popcount(), 1);
    }

    #[test]
    fn serde_names() {
        let spec = SamplerSpec::Prob {
            gamma: 0.5,
            gamma_mode: GammaMode::Calibrated,
        };
        assert_eq!(spec.kind_name(), "prob");
        assert_eq!(SamplerSpec::from_kind("obftf-prox").unwrap(), SamplerSpec::ObftfProx);
    }

    fn batch() -> impl Strategy<Value = (Vec<f64>, f64, u64)> {
        (
            prop::collection::vec(0.0f64..10.0, 1..96),
            0.01f64..=1.0,
            any::<u64>(),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn popcount_contracts((values, rate, seed) in batch()) {
            let l = lv(&values);
            let b = effective_budget(Budget::Ratio(rate), values.len()).unwrap();
            for spec in all_specs() {
                let m = select(&spec, &l, Budget::Ratio(rate), &mut stream(seed)).unwrap();
                prop_assert!(m.popcount() >= 1);
                prop_assert_eq!(m.len(), values.len());
                if spec.is_fixed_cardinality() {
                    prop_assert_eq!(m.popcount(), b, "{:?}", spec);
                }
            }
        }

        #[test]
        fn identical_seeds_give_identical_masks((values, rate, seed) in batch()) {
            let l = lv(&values);
            for spec in all_specs() {
                let a = select(&spec, &l, Budget::Ratio(rate), &mut stream(seed)).unwrap();
                let b = select(&spec, &l, Budget::Ratio(rate), &mut stream(seed)).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn mink_selection_is_below_the_rest((values, rate, seed) in batch()) {
            let l = lv(&values);
            let m = select(&SamplerSpec::mink(), &l, Budget::Ratio(rate), &mut stream(seed)).unwrap();
            let inside = values.iter().zip(m.bits()).filter(|(_, &z)| z).map(|(v, _)| *v).fold(f64::MIN, f64::max);
            let outside = values.iter().zip(m.bits()).filter(|(_, &z)| !z).map(|(v, _)| *v).fold(f64::MAX, f64::min);
            prop_assert!(inside <= outside);
        }

        #[test]
        fn obftf_never_worse_than_prox((values, rate, seed) in batch()) {
            let l = lv(&values);
            let mut rng = stream(seed);
            let exact = select_detailed(&SamplerSpec::obftf(), &l, Budget::Ratio(rate), &mut rng).unwrap();
            let prox = select_detailed(&SamplerSpec::ObftfProx, &l, Budget::Ratio(rate), &mut rng).unwrap();
            prop_assert!(exact.objective <= prox.objective);
        }
    }
}
