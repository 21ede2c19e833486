//! Cartesian sweeps over samplers, selection rates and seeds.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use obftf_core::rng::derive_indexed;
use obftf_core::{Budget, Error, Result, SamplerSpec, Scalar};

use crate::config::{sampler_label, DatasetConfig, ExperimentConfig, Precision};
use crate::metrics::MetricsRecord;
use crate::run::{baseline_losses, is_full_data, load_data, train_with, write_outputs, RunData};

pub const AGGREGATE_HEADER: &str = "sampler,rate,runs,failed,test_mean_loss_mean,test_mean_loss_std,normalized_test_loss_mean,normalized_test_loss_std,test_accuracy_mean,test_accuracy_std,backward_count_mean";
pub const LONG_HEADER: &str = "sampler,rate,seed,test_mean_loss,normalized_test_loss,test_accuracy,backward_count,solver_status";
pub const FAILURES_HEADER: &str = "sampler,rate,seed,error";

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: ExperimentConfig,
    pub samplers: Vec<SamplerSpec>,
    pub rates: Vec<f64>,
    /// Seed indices; each becomes a run seed derived from the base seed.
    pub seeds: Vec<u64>,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub sampler: String,
    pub rate: f64,
    pub seed_index: u64,
    pub outcome: std::result::Result<MetricsRecord, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub sampler: String,
    pub rate: f64,
    pub runs: usize,
    pub failed: usize,
    pub test_mean_loss: (f64, f64),
    pub normalized_test_loss: Option<(f64, f64)>,
    pub test_accuracy: Option<(f64, f64)>,
    pub backward_count_mean: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl SweepResult {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    pub fn row(&self, sampler: &str, rate: f64) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|r| r.sampler == sampler && r.rate == rate)
    }
}

/// Run seed of the `index`-th seed of a sweep.
pub fn cell_seed(master: u64, index: u64) -> u64 {
    derive_indexed(master, "seed", index)
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.samplers.is_empty() || self.rates.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("sweep", "samplers, rates and seeds must be non-empty"));
        }
        for &r in &self.rates {
            Budget::Ratio(r).validate()?;
        }
        let labels: Vec<String> = self.samplers.iter().map(sampler_label).collect();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::config("sweep.samplers", format!("sampler '{l}' listed twice")));
            }
        }
        self.base.validate()
    }

    /// Configuration of one cell.
    pub fn cell_config(&self, sampler: &SamplerSpec, rate: f64, seed_index: u64) -> ExperimentConfig {
        let label = sampler_label(sampler);
        ExperimentConfig {
            sampler: sampler.clone(),
            budget: Budget::Ratio(rate),
            seed: cell_seed(self.base.seed, seed_index),
            out_dir: self
                .base
                .out_dir
                .join("cells")
                .join(format!("{label}_r{rate}_s{seed_index}")),
            ..self.base.clone()
        }
    }
}

/// Applies `f` to every item on up to `workers` threads; results keep the
/// input order.
pub fn parallel_map<I: Sync, O: Send>(items: &[I], workers: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<O>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|o| o.expect("every item processed"))
        .collect()
}

struct SeedContext<T> {
    data: std::sync::Arc<RunData<T>>,
    baseline: Option<Vec<f64>>,
}

fn sweep_typed<T: Scalar>(plan: &SweepPlan, write: bool) -> Result<SweepResult> {
    // Regression data depends on the seed; MNIST is loaded once.
    let shared = match plan.base.dataset {
        DatasetConfig::Mnist(_) => Some(std::sync::Arc::new(load_data::<T>(&plan.base)?)),
        DatasetConfig::Regression(_) => None,
    };
    let contexts: Vec<std::result::Result<SeedContext<T>, String>> = parallel_map(&plan.seeds, plan.workers, |&idx| {
        let config = ExperimentConfig {
            seed: cell_seed(plan.base.seed, idx),
            ..plan.base.clone()
        };
        let data = match &shared {
            Some(d) => d.clone(),
            None => std::sync::Arc::new(load_data::<T>(&config).map_err(|e| e.to_string())?),
        };
        let baseline = if config.is_regression() {
            Some(baseline_losses(&config, &data).map_err(|e| format!("baseline: {e}"))?)
        } else {
            None
        };
        Ok(SeedContext { data, baseline })
    });
    let contexts: HashMap<u64, &std::result::Result<SeedContext<T>, String>> =
        plan.seeds.iter().copied().zip(contexts.iter()).collect();

    let mut jobs = Vec::new();
    for sampler in &plan.samplers {
        for &rate in &plan.rates {
            for &seed in &plan.seeds {
                jobs.push((sampler, rate, seed));
            }
        }
    }
    let cells = parallel_map(&jobs, plan.workers, |&(sampler, rate, seed)| {
        let config = plan.cell_config(sampler, rate, seed);
        let outcome = match contexts[&seed] {
            Err(e) => Err(e.clone()),
            Ok(ctx) => {
                let baseline = if is_full_data(&config) { None } else { ctx.baseline.as_deref() };
                train_with(&config, &ctx.data, baseline)
                    .and_then(|out| {
                        if write {
                            write_outputs(&config, &ctx.data, &out)?;
                        }
                        Ok(out.records.last().cloned().expect("final record"))
                    })
                    .map_err(|e| e.to_string())
            }
        };
        CellResult {
            sampler: sampler_label(sampler),
            rate,
            seed_index: seed,
            outcome,
        }
    });
    let aggregate = aggregate(plan, &cells);
    Ok(SweepResult { cells, aggregate })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation over the successful seeds of each
/// `(sampler, rate)` pair, in plan order.
pub fn aggregate(plan: &SweepPlan, cells: &[CellResult]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for sampler in &plan.samplers {
        let label = sampler_label(sampler);
        for &rate in &plan.rates {
            let group: Vec<&CellResult> = cells.iter().filter(|c| c.sampler == label && c.rate == rate).collect();
            let ok: Vec<&MetricsRecord> = group.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
            let failed = group.len() - ok.len();
            let column = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| -> Option<(f64, f64)> {
                let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty() && v.len() == ok.len()).then(|| mean_std(&v))
            };
            rows.push(AggregateRow {
                sampler: label.clone(),
                rate,
                runs: ok.len(),
                failed,
                test_mean_loss: column(&|r| Some(r.test_mean_loss)).unwrap_or((f64::NAN, f64::NAN)),
                normalized_test_loss: column(&|r| r.normalized_test_loss),
                test_accuracy: column(&|r| r.test_accuracy),
                backward_count_mean: if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| r.backward_count as f64).sum::<f64>() / ok.len() as f64
                },
            });
        }
    }
    rows
}

fn pair(v: Option<(f64, f64)>) -> String {
    v.map(|(m, s)| format!("{m},{s}")).unwrap_or_else(|| ",".into())
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.sampler,
            r.rate,
            r.runs,
            r.failed,
            pair(Some(r.test_mean_loss)),
            pair(r.normalized_test_loss),
            pair(r.test_accuracy),
            r.backward_count_mean
        )
        .expect("string");
    }
    out
}

pub fn long_csv(cells: &[CellResult]) -> String {
    let mut out = format!("{LONG_HEADER}\n");
    for c in cells {
        if let Ok(r) = &c.outcome {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.sampler,
                c.rate,
                c.seed_index,
                r.test_mean_loss,
                opt(r.normalized_test_loss),
                opt(r.test_accuracy),
                r.backward_count,
                r.solver_status.map(|s| s.as_str()).unwrap_or("")
            )
            .expect("string");
        }
    }
    out
}

/// gnuplot data: one indexed block per sampler with `rate mean std` of the
/// headline metric (normalized test loss or test accuracy).
pub fn aggregate_dat(rows: &[AggregateRow]) -> String {
    let mut out = String::new();
    let mut current: Option<&str> = None;
    for r in rows {
        if current != Some(r.sampler.as_str()) {
            if current.is_some() {
                out.push_str("\n\n");
            }
            let metric = if r.test_accuracy.is_some() { "test_accuracy" } else { "normalized_test_loss" };
            writeln!(out, "# sampler {}\n# rate {metric}_mean {metric}_std", r.sampler).expect("string");
            current = Some(&r.sampler);
        }
        if let Some((m, s)) = r.test_accuracy.or(r.normalized_test_loss) {
            writeln!(out, "{} {m} {s}", r.rate).expect("string");
        }
    }
    out
}

pub fn failures_csv(cells: &[CellResult]) -> String {
    let mut out = format!("{FAILURES_HEADER}\n");
    for c in cells {
        if let Err(e) = &c.outcome {
            let clean = e.replace([',', '\n'], ";");
            writeln!(out, "{},{},{},{clean}", c.sampler, c.rate, c.seed_index).expect("string");
        }
    }
    out
}

/// Runs every cell. Cell failures are recorded, not raised; only plan
/// errors and shared data loading fail the whole sweep.
pub fn sweep(plan: &SweepPlan, write: bool) -> Result<SweepResult> {
    plan.validate()?;
    let result = match plan.base.precision {
        Precision::F64 => sweep_typed::<f64>(plan, write)?,
        Precision::F32 => sweep_typed::<f32>(plan, write)?,
    };
    if write {
        let dir: &PathBuf = &plan.base.out_dir;
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("aggregate.csv"), aggregate_csv(&result.aggregate))?;
        std::fs::write(dir.join("aggregate.dat"), aggregate_dat(&result.aggregate))?;
        std::fs::write(dir.join("runs_long.csv"), long_csv(&result.cells))?;
        std::fs::write(dir.join("failures.csv"), failures_csv(&result.cells))?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use obftf_core::data::RegressionSpec;

    fn plan(samplers: Vec<SamplerSpec>, rates: Vec<f64>, seeds: Vec<u64>) -> SweepPlan {
        let mut base = ExperimentConfig::preset("regression-outliers").unwrap();
        base.dataset = DatasetConfig::Regression(RegressionSpec {
            n_train: 200,
            n_test: 300,
            outlier_count: 5,
            ..RegressionSpec::default()
        });
        base.epochs = 3;
        base.eval_every = 3;
        SweepPlan {
            base,
            samplers,
            rates,
            seeds,
            workers: 2,
        }
    }

    #[test]
    fn counts_runs_and_rows() {
        let p = plan(vec![SamplerSpec::uniform(), SamplerSpec::obftf()], vec![0.1, 0.25, 0.5], vec![0, 1, 2]);
        let r = sweep(&p, false).unwrap();
        assert_eq!(r.cells.len(), 18);
        assert_eq!(r.aggregate.len(), 6);
        assert_eq!(r.failed(), 0);
        assert!(r.row("obftf", 0.25).unwrap().normalized_test_loss.is_some());
    }

    #[test]
    fn single_cell_aggregate_is_the_run() {
        let p = plan(vec![SamplerSpec::mink()], vec![0.25], vec![4]);
        let r = sweep(&p, false).unwrap();
        let run = r.cells[0].outcome.as_ref().unwrap();
        let row = &r.aggregate[0];
        assert_eq!(row.test_mean_loss, (run.test_mean_loss, 0.0));
        assert_eq!(row.normalized_test_loss, Some((run.normalized_test_loss.unwrap(), 0.0)));
    }

    #[test]
    fn adding_cells_leaves_others_unchanged() {
        let small = sweep(&plan(vec![SamplerSpec::obftf()], vec![0.25], vec![1]), false).unwrap();
        let big = sweep(&plan(vec![SamplerSpec::uniform(), SamplerSpec::obftf()], vec![0.1, 0.25], vec![0, 1]), false).unwrap();
        let a = small.cells[0].outcome.as_ref().unwrap();
        let b = big
            .cells
            .iter()
            .find(|c| c.sampler == "obftf" && c.rate == 0.25 && c.seed_index == 1)
            .unwrap()
            .outcome
            .as_ref()
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut p = plan(vec![SamplerSpec::uniform(), SamplerSpec::ObftfProx], vec![0.2], vec![0, 1, 2]);
        let a = sweep(&p, false).unwrap();
        p.workers = 1;
        let b = sweep(&p, false).unwrap();
        assert_eq!(aggregate_csv(&a.aggregate), aggregate_csv(&b.aggregate));
    }

    #[test]
    fn failing_cells_are_recorded() {
        let mut p = plan(vec![SamplerSpec::uniform()], vec![0.5], vec![0]);
        // A diverging learning rate drives losses to infinity.
        p.base.lr = obftf_core::LrSchedule::constant(10.0);
        p.base.epochs = 40;
        let r = sweep(&p, false).unwrap();
        assert_eq!(r.failed(), 1);
        assert_eq!(r.aggregate[0].runs, 0);
        assert!(failures_csv(&r.cells).lines().count() == 2);
    }

    #[test]
    fn plan_errors() {
        assert!(sweep(&plan(vec![], vec![0.1], vec![0]), false).is_err());
        assert!(sweep(&plan(vec![SamplerSpec::uniform()], vec![1.5], vec![0]), false).is_err());
        assert!(sweep(&plan(vec![SamplerSpec::uniform(), SamplerSpec::uniform()], vec![0.5], vec![0]), false).is_err());
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<u32> = (0..100).collect();
        assert_eq!(parallel_map(&v, 4, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
