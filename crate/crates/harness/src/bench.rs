//! Exact versus strided subset selection on random loss vectors.

use std::fmt::Write as _;

use obftf_core::rng::{derive_indexed, stream};
use obftf_core::solver::{branch_and_bound_select, strided_report, DEFAULT_EPSILON_ABS};
use obftf_core::{LossVector, Result, SolveStatus, SubsetInstance};
use rand::Rng;

pub const BENCH_HEADER: &str = "n,b,instance,exact_objective,exact_status,exact_nodes,exact_time_us,strided_objective,ratio";

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub n: usize,
    pub b: usize,
    pub instance: usize,
    pub exact_objective: f64,
    pub exact_status: SolveStatus,
    pub exact_nodes: u64,
    pub exact_time_us: u128,
    pub strided_objective: f64,
}

impl BenchRow {
    /// Exact objective over strided objective; 1 when both are zero.
    pub fn ratio(&self) -> f64 {
        if self.strided_objective == 0.0 {
            if self.exact_objective == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            self.exact_objective / self.strided_objective
        }
    }
}

/// Losses `U(0, 1)` for instance `i` of a benchmark seeded with `seed`.
pub fn bench_losses(seed: u64, n: usize, i: usize) -> Result<LossVector> {
    let mut rng = stream(derive_indexed(seed, "bench", i as u64));
    LossVector::new((0..n).map(|_| rng.random::<f64>()).collect())
}

/// `instances` random instances for every budget in `budgets`, cycling
/// through the budgets.
pub fn bench_solver(n: usize, budgets: &[usize], instances: usize, seed: u64, node_limit: u64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(instances);
    for i in 0..instances {
        let b = budgets[i % budgets.len()];
        let inst = SubsetInstance::new(bench_losses(seed, n, i)?, b)?;
        let exact = branch_and_bound_select(&inst, node_limit, DEFAULT_EPSILON_ABS)?;
        let strided = strided_report(&inst)?;
        rows.push(BenchRow {
            n,
            b,
            instance: i,
            exact_objective: exact.objective,
            exact_status: exact.status,
            exact_nodes: exact.nodes_explored,
            exact_time_us: exact.wall_time.as_micros(),
            strided_objective: strided.objective,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            r.b,
            r.instance,
            r.exact_objective,
            r.exact_status.as_str(),
            r.exact_nodes,
            r.exact_time_us,
            r.strided_objective,
            r.ratio()
        )
        .expect("string");
    }
    out
}
