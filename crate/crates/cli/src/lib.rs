//! Orchestration for the `nnmpc` binary: dataset generation, training,
//! closed-loop simulation, comparison and benchmarking.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod energy;
pub mod metrics;
pub mod report;
pub mod sim;
