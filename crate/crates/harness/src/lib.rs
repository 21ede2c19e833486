//! Experiment harness: configuration, single runs, sweeps and the command
//! line built on top of `obftf-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod metrics;
pub mod run;
pub mod sweep;
