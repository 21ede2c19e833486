//! Per-evaluation metrics rows and their CSV encoding.

use std::fmt::Write as _;

use obftf_core::SolveStatus;

pub const METRICS_HEADER: &str = "epoch,step,train_mean_loss,test_mean_loss,test_accuracy,normalized_test_loss,selected_count,solver_objective,solver_status,forward_count,backward_count,wall_time_ms";

/// One row of `metrics.csv`. Optional fields are written as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub step: u64,
    pub train_mean_loss: f64,
    pub test_mean_loss: f64,
    pub test_accuracy: Option<f64>,
    pub normalized_test_loss: Option<f64>,
    /// Samples back-propagated since the previous record.
    pub selected_count: u64,
    /// Mean solver objective over the batches since the previous record.
    pub solver_objective: Option<f64>,
    pub solver_status: Option<SolveStatus>,
    pub forward_count: u64,
    pub backward_count: u64,
    pub wall_time_ms: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            self.train_mean_loss,
            self.test_mean_loss,
            opt(self.test_accuracy),
            opt(self.normalized_test_loss),
            self.selected_count,
            opt(self.solver_objective),
            self.solver_status.map(|s| s.as_str()).unwrap_or(""),
            self.forward_count,
            self.backward_count,
            self.wall_time_ms,
        )
        .expect("writing to a string");
        s
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_matches_header_width() {
        let r = MetricsRecord {
            epoch: 1,
            step: 8,
            train_mean_loss: 0.5,
            test_mean_loss: 0.25,
            test_accuracy: None,
            normalized_test_loss: Some(1.0),
            selected_count: 256,
            solver_objective: Some(0.0),
            solver_status: Some(SolveStatus::ProvenOptimal),
            forward_count: 1000,
            backward_count: 256,
            wall_time_ms: 0,
        };
        assert_eq!(r.csv_row(), "1,8,0.5,0.25,,1,256,0,proven-optimal,1000,256,0");
        assert_eq!(r.csv_row().split(',').count(), METRICS_HEADER.split(',').count());
    }
}
