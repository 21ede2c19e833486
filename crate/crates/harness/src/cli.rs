//! Command-line front end.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use obftf_core::bilevel::{bilevel_enumerate, BilevelInstance, SubsetPolicy};
use obftf_core::data::{gen_regression, read_regression_csv, write_regression_csv, Provenance, RegressionSpec};
use obftf_core::solver::{
    branch_and_bound_select, brute_force_select, strided_report, DEFAULT_EPSILON_ABS, DEFAULT_NODE_LIMIT,
};
use obftf_core::{Cardinality, Error, LossVector, Result, SubsetInstance, TargetPolicy};

use crate::bench::{bench_csv, bench_solver};
use crate::config::{resolve, sampler_from_arg};
use crate::run::run;
use crate::sweep::{sweep, SweepPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

/// Exit code for an error: 2 for usage and configuration, 3 for data and I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Usage(_) | Error::Config { .. } | Error::CapExceeded { .. } => EXIT_USAGE,
        Error::Input(_) | Error::Format { .. } | Error::Io(_) => EXIT_DATA,
        Error::Batch { .. } => EXIT_INTERNAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "obftf", version, about = "Loss-based mini-batch subsampling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic regression splits as CSV.
    GenData(GenDataArgs),
    /// Train one configuration. Any `--dotted.key value` pair overrides the config.
    Train(ExperimentArgs),
    /// Train every (sampler, rate, seed) combination and aggregate over seeds.
    Sweep(SweepArgs),
    /// Select a subset from a file with one loss per line.
    Solve(SolveArgs),
    /// Exhaustive subset search for 1D least squares on CSV data.
    Bilevel(BilevelArgs),
    /// Compare exact and strided selection on random instances.
    BenchSolver(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// regression-paper, regression-outliers, mnist-desk or mnist-paper.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON file merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// `key value` pairs collected from unrecognized `--key` flags.
    #[arg(skip)]
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Comma-separated sampler names (or one inline JSON spec).
    #[arg(long, default_value = "uniform,obftf")]
    pub samplers: String,
    /// Comma-separated selection rates.
    #[arg(long, default_value = "0.1,0.25,0.5")]
    pub rates: String,
    /// Number of seeds per cell.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub outlier_count: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 10000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 5.0)]
    pub noise_half_width: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SolverKind {
    Bnb,
    Brute,
    Strided,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub file: PathBuf,
    #[arg(long)]
    pub budget: usize,
    #[arg(long, value_enum, default_value = "bnb")]
    pub solver: SolverKind,
    #[arg(long, value_enum, default_value = "mean")]
    pub target: TargetArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_NODE_LIMIT)]
    pub node_limit: u64,
    /// Allow fewer than `budget` samples.
    #[arg(long)]
    pub at_most: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    Mean,
    Noisy,
}

#[derive(Debug, Args)]
pub struct BilevelArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "exact-k")]
    pub policy: PolicyArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    ExactK,
    AtMostK,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 128)]
    pub n: usize,
    #[arg(long, default_value = "8,16,32,64")]
    pub budgets: String,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_NODE_LIMIT)]
    pub node_limit: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

const EXPERIMENT_FLAGS: [&str; 9] = [
    "preset", "config", "seed", "out-dir", "samplers", "rates", "seeds", "workers", "help",
];

/// Splits `--key value` overrides out of `train`/`sweep` argument lists so
/// that clap only sees the flags it knows.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let is_experiment = matches!(args.get(1).map(String::as_str), Some("train" | "sweep"));
    if !is_experiment {
        return Ok((args, Vec::new()));
    }
    let mut known = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            known.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if EXPERIMENT_FLAGS.contains(&name.as_str()) || name.is_empty() {
            known.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| Error::usage(format!("--{name} needs a value")))?,
        };
        overrides.push((name, value));
    }
    Ok((known, overrides))
}

fn resolve_experiment(args: &ExperimentArgs) -> Result<crate::config::ExperimentConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(dir) = &args.out_dir {
        overrides.push(("out_dir".into(), serde_json::to_string(dir).expect("path json")));
    }
    resolve(args.preset.as_deref(), args.config.as_deref(), &overrides)
}

fn parse_list<T: std::str::FromStr>(field: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config(field, format!("cannot parse '{s}'")))
        })
        .collect()
}

/// Parses a loss file: one decimal value per line, blank lines ignored.
pub fn parse_losses(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(
            t.parse::<f64>()
                .map_err(|_| Error::usage(format!("line {}: '{t}' is not a number", i + 1)))?,
        );
    }
    if out.is_empty() {
        return Err(Error::usage("no losses in input"));
    }
    Ok(out)
}

pub fn solve_row(args: &SolveArgs, text: &str) -> Result<String> {
    let losses = parse_losses(text)?;
    if args.budget == 0 || args.budget > losses.len() {
        return Err(Error::usage(format!(
            "budget {} must lie in 1..={} (number of losses)",
            args.budget,
            losses.len()
        )));
    }
    let losses = LossVector::new(losses).map_err(|e| Error::usage(e.to_string()))?;
    let target = match args.target {
        TargetArg::Mean => TargetPolicy::Mean,
        TargetArg::Noisy => TargetPolicy::Noisy,
    };
    let cardinality = if args.at_most { Cardinality::AtMost } else { Cardinality::Exact };
    let inst = SubsetInstance::new(losses, args.budget)?
        .with_target(target, args.seed)
        .with_cardinality(cardinality);
    let report = match args.solver {
        SolverKind::Bnb => branch_and_bound_select(&inst, args.node_limit, DEFAULT_EPSILON_ABS)?,
        SolverKind::Brute => brute_force_select(&inst)?,
        SolverKind::Strided => strided_report(&inst)?,
    };
    let indices: Vec<String> = report.mask.indices().iter().map(usize::to_string).collect();
    Ok(format!(
        "indices,objective,status,nodes,time_us\n{},{},{},{},{}\n",
        indices.join(";"),
        report.objective,
        report.status.as_str(),
        report.nodes_explored,
        report.wall_time.as_micros()
    ))
}

fn read_csv_data(path: &Path, field: &str) -> Result<obftf_core::Dataset> {
    let file = std::fs::File::open(path)?;
    read_regression_csv(BufReader::new(file), field)
}

fn gen_data(args: &GenDataArgs) -> Result<String> {
    let spec = RegressionSpec {
        n_train: args.n_train,
        n_test: args.n_test,
        outlier_count: args.outlier_count,
        noise_half_width: args.noise_half_width,
        seed: args.seed,
        ..RegressionSpec::default()
    };
    let (train, test) = gen_regression::<f64>(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let write = |name: &str, data: &obftf_core::Dataset| -> Result<()> {
        let f = std::fs::File::create(args.out_dir.join(name))?;
        let mut w = std::io::BufWriter::new(f);
        write_regression_csv(&mut w, data)?;
        w.flush()?;
        Ok(())
    };
    write("train.csv", &train.data)?;
    write("test.csv", &test.data)?;
    let outliers = match &train.provenance {
        Provenance::Synthetic { outliers, .. } => outliers.clone(),
        Provenance::File { .. } => Vec::new(),
    };
    let meta = serde_json::json!({ "spec": spec, "seed": args.seed, "outliers": outliers });
    std::fs::write(
        args.out_dir.join("data.json"),
        serde_json::to_string_pretty(&meta).expect("json") + "\n",
    )?;
    Ok(format!(
        "wrote {} train and {} test points to {}\n",
        train.data.len(),
        test.data.len(),
        args.out_dir.display()
    ))
}

fn bilevel(args: &BilevelArgs) -> Result<String> {
    let train = read_csv_data(&args.train, "train")?;
    let test = read_csv_data(&args.test, "test")?;
    let policy = match args.policy {
        PolicyArg::ExactK => SubsetPolicy::ExactK,
        PolicyArg::AtMostK => SubsetPolicy::AtMostK,
    };
    let inst = BilevelInstance::new(&train, &test, args.k, policy)?;
    let r = bilevel_enumerate(&inst)?;
    let indices: Vec<String> = r.mask.indices().iter().map(usize::to_string).collect();
    Ok(format!(
        "indices,objective,full_risk,subset_risk,subset_w,subset_c,degenerate,evaluated\n{},{},{},{},{},{},{},{}\n",
        indices.join(";"),
        r.objective,
        r.full_risk,
        r.subset_risk,
        r.subset_fit.w,
        r.subset_fit.c,
        r.subset_fit.degenerate,
        r.evaluated
    ))
}

/// Executes a parsed command; returns what to print on standard output.
pub fn execute(cli: Cli) -> Result<(String, i32)> {
    match cli.command {
        Command::GenData(a) => Ok((gen_data(&a)?, EXIT_OK)),
        Command::Train(a) => {
            let config = resolve_experiment(&a)?;
            let out = run(&config)?;
            let last = out.last();
            Ok((
                format!(
                    "epoch {} test_mean_loss {}{} -> {}\n",
                    last.epoch,
                    last.test_mean_loss,
                    last.test_accuracy.map(|a| format!(" test_accuracy {a}")).unwrap_or_default(),
                    config.out_dir.display()
                ),
                EXIT_OK,
            ))
        }
        Command::Sweep(a) => {
            let base = resolve_experiment(&a.experiment)?;
            let samplers = if a.samplers.trim_start().starts_with('{') {
                vec![sampler_from_arg(&a.samplers)?]
            } else {
                a.samplers.split(',').map(sampler_from_arg).collect::<Result<_>>()?
            };
            let plan = SweepPlan {
                base,
                samplers,
                rates: parse_list("rates", &a.rates)?,
                seeds: (0..a.seeds).collect(),
                workers: a
                    .workers
                    .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            };
            let result = sweep(&plan, true)?;
            let failed = result.failed();
            let code = if failed > 0 { EXIT_DATA } else { EXIT_OK };
            Ok((
                format!(
                    "{} runs, {failed} failed -> {}\n",
                    result.cells.len(),
                    plan.base.out_dir.join("aggregate.csv").display()
                ),
                code,
            ))
        }
        Command::Solve(a) => {
            let text = std::fs::read_to_string(&a.file)?;
            Ok((solve_row(&a, &text)?, EXIT_OK))
        }
        Command::Bilevel(a) => Ok((bilevel(&a)?, EXIT_OK)),
        Command::BenchSolver(a) => {
            let budgets: Vec<usize> = parse_list("budgets", &a.budgets)?;
            if budgets.is_empty() || a.instances == 0 {
                return Err(Error::config("budgets", "need at least one budget and one instance"));
            }
            let rows = bench_solver(a.n, &budgets, a.instances, a.seed, a.node_limit)?;
            let csv = bench_csv(&rows);
            let mean = rows.iter().map(|r| r.ratio()).sum::<f64>() / rows.len() as f64;
            eprintln!("mean exact/strided objective ratio: {mean}");
            match &a.out {
                Some(p) => {
                    std::fs::write(p, csv)?;
                    Ok((String::new(), EXIT_OK))
                }
                None => Ok((csv, EXIT_OK)),
            }
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let (args, overrides) = match split_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let mut cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match &mut cli.command {
        Command::Train(a) => a.overrides = overrides,
        Command::Sweep(a) => a.experiment.overrides = overrides,
        _ => {}
    }
    match execute(cli) {
        Ok((out, code)) => {
            print!("{out}");
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_args(budget: usize) -> SolveArgs {
        SolveArgs {
            file: PathBuf::new(),
            budget,
            solver: SolverKind::Bnb,
            target: TargetArg::Mean,
            seed: 0,
            node_limit: DEFAULT_NODE_LIMIT,
            at_most: false,
        }
    }

    #[test]
    fn solve_examples() {
        let out = solve_row(&solve_args(2), "1\n2\n3\n4\n").unwrap();
        let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(&row[..3], &["0;3", "0", "proven-optimal"]);
        let out = solve_row(&solve_args(1), "0.7\n").unwrap();
        assert!(out.lines().nth(1).unwrap().starts_with("0,0,"));
        let e = solve_row(&solve_args(5), "1\n2\n").unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
        let e = solve_row(&solve_args(1), "1\nabc\n").unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
        let e = solve_row(&solve_args(1), "-1\n").unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
    }

    #[test]
    fn overrides_are_split_out() {
        let args: Vec<String> = ["obftf", "train", "--preset", "mnist-desk", "--epochs", "2", "--lr.rate=0.5", "--seed", "3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (known, o) = split_overrides(args).unwrap();
        assert_eq!(known, vec!["obftf", "train", "--preset", "mnist-desk", "--seed", "3"]);
        assert_eq!(o, vec![("epochs".into(), "2".into()), ("lr.rate".into(), "0.5".into())]);
        let dangling: Vec<String> = ["obftf", "train", "--epochs"].iter().map(|s| s.to_string()).collect();
        assert!(split_overrides(dangling).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::usage("x")), 2);
        assert_eq!(exit_code(&Error::config("a", "b")), 2);
        assert_eq!(exit_code(&Error::format("a", 0, "b")), 3);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 3);
        let nested = Error::Batch {
            index: 2,
            source: Box::new(Error::Input("nan".into())),
        };
        assert_eq!(exit_code(&nested), 3);
    }
}
