//! Experiment harness: configuration, trial runner, aggregation and plots.

pub mod config;
pub mod experiment;
pub mod plot;
pub mod report;
