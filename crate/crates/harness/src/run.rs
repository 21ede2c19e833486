//! A single training run and its output files.

use std::path::Path;
use std::time::Instant;

use obftf_core::data::{self, gen_regression, load_mnist, mnist_paths, DatasetHandle, MnistOptions, Provenance, Split};
use obftf_core::model::{write_snapshot, Layout, ModelParams};
use obftf_core::rng::derive_seed;
use obftf_core::train::{evaluate, TrainState};
use obftf_core::{Budget, Error, Result, SamplerSpec, Scalar, SolveStatus};
use serde_json::json;

use crate::config::{DatasetConfig, ExperimentConfig, ModelConfig, Precision};
use crate::metrics::{metrics_csv, MetricsRecord};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Train and test splits of a run.
#[derive(Debug, Clone)]
pub struct RunData<T> {
    pub train: DatasetHandle<T>,
    pub test: DatasetHandle<T>,
}

/// Seed of the synthetic data for a run seed.
pub fn data_seed(seed: u64) -> u64 {
    derive_seed(seed, "data")
}

pub fn load_data<T: Scalar>(config: &ExperimentConfig) -> Result<RunData<T>> {
    match &config.dataset {
        DatasetConfig::Regression(spec) => {
            let spec = data::RegressionSpec {
                seed: data_seed(config.seed),
                ..*spec
            };
            let (train, test) = gen_regression(&spec)?;
            Ok(RunData { train, test })
        }
        DatasetConfig::Mnist(m) => {
            let load = |split, limit| {
                let (images, labels) = mnist_paths(&m.dir, split);
                load_mnist(&images, &labels, split, MnistOptions { scale: m.scale, limit })
            };
            Ok(RunData {
                train: load(Split::Train, m.train_limit)?,
                test: load(Split::Test, m.test_limit)?,
            })
        }
    }
}

fn layout(config: &ExperimentConfig, dim: usize, classes: Option<usize>) -> Result<Layout> {
    match &config.model {
        ModelConfig::Linear1d => Ok(Layout::linear_1d()),
        ModelConfig::Mlp { hidden } => Layout::mlp(dim, hidden, classes.unwrap_or(10)),
    }
}

/// The same run with every sample back-propagated.
pub fn baseline_config(config: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        sampler: SamplerSpec::uniform(),
        budget: Budget::Ratio(1.0),
        ..config.clone()
    }
}

pub fn is_full_data(config: &ExperimentConfig) -> bool {
    config.sampler == SamplerSpec::uniform() && matches!(config.budget, Budget::Ratio(r) if r == 1.0)
}

/// Result of training: metrics rows and final parameters.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub records: Vec<MetricsRecord>,
    pub params: ModelParams<T>,
}

#[derive(Default)]
struct Interval {
    loss_sum: f64,
    seen: usize,
    selected: u64,
    objective_sum: f64,
    objective_batches: usize,
    status: Option<SolveStatus>,
}

fn weaker(a: Option<SolveStatus>, b: Option<SolveStatus>) -> Option<SolveStatus> {
    let rank = |s: &SolveStatus| match s {
        SolveStatus::ProvenOptimal => 0,
        SolveStatus::Heuristic => 1,
        SolveStatus::BudgetExhaustedBestFound => 2,
    };
    match (a, b) {
        (Some(x), Some(y)) => Some(if rank(&y) > rank(&x) { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Trains on `data` as configured. `baseline` holds the full-data run's
/// test losses at the same evaluation points; regression runs use it for
/// the normalized test loss.
pub fn train_with<T: Scalar>(config: &ExperimentConfig, data: &RunData<T>, baseline: Option<&[f64]>) -> Result<TrainOutcome<T>> {
    let started = Instant::now();
    let train = &data.train.data;
    let test = &data.test.data;
    let layout = layout(config, train.dim(), train.classes())?;
    let params = ModelParams::init(layout, derive_seed(config.seed, "init"));
    let mut state = TrainState::new(params, config.lr, config.reduction, config.seed)?;

    let mut records = Vec::new();
    let mut interval = Interval::default();
    for epoch in 1..=config.epochs {
        let stats = state.obftf_epoch(train, config.batch_size, &config.sampler, config.budget)?;
        for b in &stats.batches {
            interval.loss_sum += b.batch_mean_loss * b.batch_len as f64;
            interval.seen += b.batch_len;
            interval.selected += b.selected as u64;
            if let Some(o) = b.objective {
                interval.objective_sum += o;
                interval.objective_batches += 1;
            }
            interval.status = weaker(interval.status, b.status);
        }
        if epoch % config.eval_every != 0 && epoch != config.epochs {
            continue;
        }
        let eval = evaluate(&state.params, test)?;
        let normalized = match (config.is_regression(), baseline) {
            (true, Some(base)) => {
                let b = *base.get(records.len()).ok_or_else(|| Error::usage("baseline has fewer evaluation points than the run"))?;
                Some(data::normalized_test_loss(eval.mean_loss, b)?)
            }
            (true, None) => Some(1.0),
            (false, _) => None,
        };
        records.push(MetricsRecord {
            epoch,
            step: state.step,
            train_mean_loss: interval.loss_sum / interval.seen as f64,
            test_mean_loss: eval.mean_loss,
            test_accuracy: eval.accuracy,
            normalized_test_loss: normalized,
            selected_count: interval.selected,
            solver_objective: (interval.objective_batches > 0)
                .then(|| interval.objective_sum / interval.objective_batches as f64),
            solver_status: interval.status,
            forward_count: state.forward_count,
            backward_count: state.backward_count,
            wall_time_ms: if config.timing { started.elapsed().as_millis() as u64 } else { 0 },
        });
        interval = Interval::default();
    }
    Ok(TrainOutcome {
        records,
        params: state.params,
    })
}

/// Test losses of the full-data run at every evaluation point.
pub fn baseline_losses<T: Scalar>(config: &ExperimentConfig, data: &RunData<T>) -> Result<Vec<f64>> {
    let out = train_with(&baseline_config(config), data, None)?;
    Ok(out.records.iter().map(|r| r.test_mean_loss).collect())
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub params: Vec<f64>,
}

impl RunOutcome {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("runs record at least the final epoch")
    }
}

fn provenance_json<T>(handle: &DatasetHandle<T>) -> serde_json::Value {
    match &handle.provenance {
        Provenance::Synthetic { spec, outliers } => json!({
            "kind": "synthetic",
            "spec": spec,
            "seed": spec.seed,
            "outliers": outliers,
        }),
        Provenance::File { paths, sha256 } => json!({
            "kind": "file",
            "paths": paths,
            "sha256": sha256,
        }),
    }
}

/// Writes `metrics.csv`, `config.resolved.json` and `params.bin` to the
/// configured output directory.
pub fn write_outputs<T: Scalar>(config: &ExperimentConfig, data: &RunData<T>, outcome: &TrainOutcome<T>) -> Result<()> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&outcome.records))?;
    let resolved = json!({
        "code_version": CODE_VERSION,
        "config": config,
        "train_data": provenance_json(&data.train),
        "test_data": provenance_json(&data.test),
        "normalized_test_loss": "test loss divided by the same-seed run that back-propagates every sample",
    });
    let mut text = serde_json::to_string_pretty(&resolved).expect("json");
    text.push('\n');
    std::fs::write(dir.join("config.resolved.json"), text)?;
    let file = std::fs::File::create(dir.join("params.bin"))?;
    write_snapshot(std::io::BufWriter::new(file), &outcome.params, config.seed)?;
    Ok(())
}

fn run_typed<T: Scalar>(config: &ExperimentConfig, write: bool) -> Result<RunOutcome> {
    config.validate()?;
    let data = load_data::<T>(config)?;
    let baseline = if config.is_regression() && !is_full_data(config) {
        Some(baseline_losses(config, &data)?)
    } else {
        None
    };
    let outcome = train_with(config, &data, baseline.as_deref())?;
    if write {
        write_outputs(config, &data, &outcome)?;
    }
    Ok(RunOutcome {
        params: outcome.params.values().iter().map(|v| v.as_f64()).collect(),
        records: outcome.records,
    })
}

/// Runs an experiment and writes its outputs.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    match config.precision {
        Precision::F64 => run_typed::<f64>(config, true),
        Precision::F32 => run_typed::<f32>(config, true),
    }
}

/// Runs an experiment without touching the file system.
pub fn run_in_memory(config: &ExperimentConfig) -> Result<RunOutcome> {
    match config.precision {
        Precision::F64 => run_typed::<f64>(config, false),
        Precision::F32 => run_typed::<f32>(config, false),
    }
}

/// Reads a metrics file back as raw text rows (header excluded).
pub fn read_metrics_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}
